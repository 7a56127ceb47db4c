#!/usr/bin/env python3
"""Generate a planted two-cluster dataset (interactions.tsv + reviews.remb)
for desk-scale experiments."""

import argparse

from recafr.synthetic import SyntheticSpec, two_cluster_dataset, write_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=40)
    parser.add_argument("--items", type=int, default=40)
    parser.add_argument("--dim", type=int, default=16)
    parser.add_argument("--interactions-per-user", type=int, default=12)
    parser.add_argument("--cross-rate", type=float, default=0.1)
    parser.add_argument("--review-rate", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()

    spec = SyntheticSpec(
        num_users=args.users,
        num_items=args.items,
        dim=args.dim,
        interactions_per_user=args.interactions_per_user,
        cross_rate=args.cross_rate,
        review_rate=args.review_rate,
        seed=args.seed,
    )
    rows, store = two_cluster_dataset(spec)
    write_dataset(rows, store, args.out)
    print(f"wrote {len(rows)} interactions and {len(store)} review vectors to {args.out}")


if __name__ == "__main__":
    main()
