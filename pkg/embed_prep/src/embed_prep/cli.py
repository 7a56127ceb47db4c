"""Command line: encode review texts into a REMB embedding file."""

from __future__ import annotations

import argparse
import sys

from .encode import EncodeError, EncodeJob, encode


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-prep", description=__doc__)
    parser.add_argument("--in", dest="infile", required=True, help="interactions TSV")
    parser.add_argument("--model", required=True, help="sentence-transformers model name, or hash<dim> for the offline stand-in")
    parser.add_argument("--dim", type=int, required=True, help="target embedding dimension")
    parser.add_argument("--proj", choices=("pca", "truncate"), default="pca")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output REMB path")
    return parser


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    job = EncodeJob(
        input_path=args.infile,
        model=args.model,
        target_dim=args.dim,
        projection=args.proj,
        batch_size=args.batch_size,
        seed=args.seed,
        output_path=args.out,
    )
    try:
        result = encode(job)
    except EncodeError as exc:
        print(f"[embed-prep] {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"[embed-prep] error: {exc}", file=sys.stderr)
        return 1
    print(
        f"[embed-prep] wrote {len(result.vectors)} vectors (dim {job.target_dim}) "
        f"to {result.output_path}; id map at {result.map_path}",
        file=sys.stderr,
    )
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
