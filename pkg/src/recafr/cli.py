"""Command-line entry point: prepare, train, evaluate, ablate, robustness,
pilot. Progress goes to stderr, artifacts to --out, and every run records a
run_manifest.json with the resolved config, seeds, and input digests.

The RECAFR_THREADS environment variable caps worker threads (applied to the
BLAS pools before numpy loads).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _apply_thread_cap() -> int | None:
    """Validate RECAFR_THREADS (the package __init__ applies the BLAS hint)."""
    raw = os.environ.get("RECAFR_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise SystemExit(f"RECAFR_THREADS must be a positive integer, got {raw!r}")
    return n


def log(msg: str) -> None:
    print(f"[recafr] {msg}", file=sys.stderr)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_inputs(paths: list[Path]) -> dict[str, str]:
    digests: dict[str, str] = {}
    for p in paths:
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    digests[str(child)] = _sha256(child)
        elif p.is_file():
            digests[str(p)] = _sha256(p)
    return digests


def _write_manifest(outdir: Path, verb: str, config: dict, seeds: dict, inputs: list[Path], outputs: list[str]) -> None:
    from . import __version__

    manifest = {
        "verb": verb,
        "version": __version__,
        "config": config,
        "seeds": seeds,
        "input_digests": _digest_inputs(inputs),
        "outputs": sorted(outputs),
        "threads_cap": os.environ.get("RECAFR_THREADS"),
    }
    (outdir / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args):
    from .config import load_config

    return load_config(getattr(args, "config", None), getattr(args, "set", None) or [])


def _load_training_inputs(args, cfg):
    from .corpus import load_embedding_file, load_prepared
    from .views import build_review_sets, sample_views

    table = load_prepared(args.data)
    store = load_embedding_file(args.embeddings)
    sets = build_review_sets(table)
    views = sample_views(sets, seed=cfg.seed)
    return table, store, sets, views


def cmd_prepare(args) -> int:
    from .corpus import (
        assign_review_ids,
        clean_reviews,
        kcore_filter,
        load_interactions,
        split,
        write_id_maps,
        write_split_files,
    )

    out = _outdir(args)
    rows = load_interactions(args.infile)
    log(f"loaded {len(rows)} interactions from {args.infile}")
    rows = clean_reviews(rows)
    review_ids = assign_review_ids(rows)  # pre-filter ids, shared with embed-prep

    if args.sample_users is not None:
        import numpy as np

        keys = sorted({r.user_key for r in rows})
        if args.sample_users < len(keys):
            picked = set(
                np.random.default_rng(args.seed).choice(keys, size=args.sample_users, replace=False)
            )
            rows = [r for r in rows if r.user_key in picked]
            log(f"sampled {args.sample_users} users -> {len(rows)} interactions")

    seen: set[tuple[str, str]] = set()
    deduped = []
    for r in rows:
        pair = (r.user_key, r.item_key)
        if pair in seen:
            continue
        seen.add(pair)
        deduped.append(r)
    if len(deduped) != len(rows):
        log(f"dropped {len(rows) - len(deduped)} duplicate (user, item) pairs")
    rows = deduped

    rows = kcore_filter(rows, args.kcore)
    log(f"{args.kcore}-core filtering kept {len(rows)} interactions")
    table = split(rows, ratios=tuple(args.ratios), seed=args.seed, review_ids=review_ids)
    write_split_files(table, out)
    write_id_maps(table, out)
    counts = {s: len(table.triples_of(s)) for s in ("train", "valid", "test")}
    log(f"split sizes: {counts}; {table.num_users} users, {table.num_items} items")
    _write_manifest(
        out,
        "prepare",
        {"kcore": args.kcore, "ratios": list(args.ratios), "sample_users": args.sample_users},
        {"seed": args.seed},
        [Path(args.infile)],
        ["train.tsv", "valid.tsv", "test.tsv", "users.map.tsv", "items.map.tsv", "reviews.map.tsv"],
    )
    return 0


def cmd_train(args) -> int:
    from .backbone import save_checkpoint
    from .trainer import train
    from .views import write_views_tsv

    out = _outdir(args)
    cfg = _resolve_config(args)
    table, store, sets, views = _load_training_inputs(args, cfg)

    result = train(
        table,
        sets,
        views,
        store,
        cfg,
        on_epoch=lambda rec: log(
            f"epoch {rec['epoch']}: loss={rec['train_loss']:.4f} valid_ndcg5={rec['valid_ndcg5']:.4f}"
        ),
    )
    if result.diverged:
        log("training diverged; keeping last good checkpoint")
    save_checkpoint(result.inference_params, out / "checkpoint.rckp")
    with open(out / "history.jsonl", "w", encoding="utf-8") as fh:
        for record in result.history:
            fh.write(json.dumps(record) + "\n")
    outputs = ["checkpoint.rckp", "history.jsonl"]
    if args.dump_views:
        write_views_tsv(views, out / "views.tsv")
        outputs.append("views.tsv")
    log(f"best epoch {result.best_epoch} (valid ndcg@5 {result.best_valid_ndcg5:.4f})")
    _write_manifest(out, "train", cfg.as_dict(), {"seed": cfg.seed}, [Path(args.data), Path(args.embeddings)], outputs)
    return 0


def cmd_evaluate(args) -> int:
    from .backbone import load_checkpoint
    from .corpus import load_prepared
    from .evaluation import evaluate, write_metrics_json

    out = _outdir(args)
    table = load_prepared(args.data)
    params = load_checkpoint(args.checkpoint)
    ks = tuple(args.ks)
    report = evaluate(params, table, ks=ks, exclude_valid=args.exclude_valid)
    write_metrics_json(report, out / "metrics.json")
    for k in ks:
        m = report.cutoffs[k]
        log(f"@{k}: recall={m.recall_mean:.4f} precision={m.precision_mean:.4f} ndcg={m.ndcg_mean:.4f}")
    _write_manifest(
        out,
        "evaluate",
        {"ks": list(ks), "exclude_valid": args.exclude_valid},
        {},
        [Path(args.data), Path(args.checkpoint)],
        ["metrics.json"],
    )
    return 0


ABLATION_VARIANTS = ("full", "no_text_init", "no_user_cl", "no_item_cl")


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .backbone import save_checkpoint
    from .evaluation import evaluate, write_metrics_json
    from .trainer import train

    out = _outdir(args)
    base_cfg = _resolve_config(args)
    table, store, sets, views = _load_training_inputs(args, base_cfg)

    ks = (5, 20)
    lines = ["variant\trecall@5\tprecision@5\tndcg@5\trecall@20\tprecision@20\tndcg@20"]
    for variant in ABLATION_VARIANTS:
        cfg = base_cfg if variant == "full" else replace(base_cfg, **{variant: True})
        log(f"ablation variant: {variant}")
        result = train(table, sets, views, store, cfg)
        report = evaluate(result.inference_params, table, ks=ks)
        vdir = out / variant
        vdir.mkdir(exist_ok=True)
        save_checkpoint(result.inference_params, vdir / "checkpoint.rckp")
        write_metrics_json(report, vdir / "metrics.json")
        cells = [variant]
        for k in ks:
            m = report.cutoffs[k]
            cells += [f"{m.recall_mean:.6f}", f"{m.precision_mean:.6f}", f"{m.ndcg_mean:.6f}"]
        lines.append("\t".join(cells))
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(
        out,
        "ablate",
        base_cfg.as_dict(),
        {"seed": base_cfg.seed},
        [Path(args.data), Path(args.embeddings)],
        ["ablation.tsv"] + [f"{v}/metrics.json" for v in ABLATION_VARIANTS],
    )
    return 0


def cmd_robustness(args) -> int:
    from .corpus import load_embedding_file, load_prepared
    from .evaluation import robustness_sweep, write_robustness_tsv
    from .views import build_review_sets

    out = _outdir(args)
    cfg = _resolve_config(args)
    table = load_prepared(args.data)
    store = load_embedding_file(args.embeddings)
    sets = build_review_sets(table)

    runs = robustness_sweep(table, sets, store, cfg, args.fractions, args.seeds)
    write_robustness_tsv(runs, out / "robustness.tsv")
    for run in runs:
        m = run.report.cutoffs[5]
        log(f"fraction={run.fraction:g} seed={run.seed}: recall@5={m.recall_mean:.4f}")
    _write_manifest(
        out,
        "robustness",
        {**cfg.as_dict(), "fractions": args.fractions},
        {"seeds": args.seeds},
        [Path(args.data), Path(args.embeddings)],
        ["robustness.tsv"],
    )
    return 0


def cmd_pilot(args) -> int:
    from .corpus import load_embedding_file, load_prepared
    from .evaluation import pilot_distributions, write_pilot_tsv
    from .views import build_review_sets, sample_views

    out = _outdir(args)
    table = load_prepared(args.data)
    store = load_embedding_file(args.embeddings)
    views = sample_views(build_review_sets(table), seed=args.seed)
    report = pilot_distributions(views, store, sample_size=args.sample_size, seed=args.seed)
    write_pilot_tsv(report, out / "pilot.tsv")
    log(
        f"user side: pos mean {report.user.pos_mean:.4f} vs neg mean {report.user.neg_mean:.4f}; "
        f"item side: pos mean {report.item.pos_mean:.4f} vs neg mean {report.item.neg_mean:.4f}"
    )
    _write_manifest(
        out,
        "pilot",
        {"sample_size": args.sample_size},
        {"seed": args.seed},
        [Path(args.data), Path(args.embeddings)],
        ["pilot.tsv"],
    )
    return 0


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recafr", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare", help="clean, filter, split, and id-map raw interactions")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--kcore", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", type=_float_list, default=[0.8, 0.1, 0.1])
    p.add_argument("--sample-users", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    def add_train_args(p):
        p.add_argument("--data", required=True, help="output directory of `prepare`")
        p.add_argument("--embeddings", required=True, help="REMB review-embedding file")
        p.add_argument("--config", default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train and checkpoint the best-validation model")
    add_train_args(p)
    p.add_argument("--dump-views", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank and score the test split from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ks", type=_int_list, default=[5, 20])
    p.add_argument("--exclude-valid", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the full model plus the three ablated variants")
    add_train_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("robustness", help="missing-review sweep: re-mask, re-train, evaluate")
    add_train_args(p)
    p.add_argument("--fractions", type=_float_list, default=[0.0, 0.3, 1.0])
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("pilot", help="similarity distributions of positive vs negative view pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-size", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pilot)
    return parser


def run(argv: list[str] | None = None) -> int:
    """Execute one verb; 0 on success, 2 on usage errors, 1 on runtime errors."""
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        log(f"error: {exc}")
        return RUNTIME_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
