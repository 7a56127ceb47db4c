"""Planted-structure synthetic data for desk-scale experiments.

Users and items are split into two clusters; interactions stay mostly
within a cluster, and each review vector blends the cluster direction, a
per-user signature, a per-item signature, and noise. Review vectors of the
same entity therefore agree more than vectors of different entities, and
cluster membership is recoverable from both interactions and reviews.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RawInteraction, ReviewEmbeddingStore, write_embedding_file


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 40
    num_items: int = 40
    dim: int = 16
    interactions_per_user: int = 12
    cross_rate: float = 0.1  # share of interactions landing in the other cluster
    signature_scale: float = 0.6
    noise_scale: float = 0.5
    review_rate: float = 1.0
    seed: int = 0


def two_cluster_dataset(spec: SyntheticSpec = SyntheticSpec()) -> tuple[list[RawInteraction], ReviewEmbeddingStore]:
    """Generate interactions plus a matching review-embedding store.

    Review ids follow first-appearance order over the generated rows, the
    same convention the corpus pipeline and embed-prep use, so the store
    can be consumed directly or written to a REMB file.
    """
    rng = np.random.default_rng(spec.seed)
    d = spec.dim

    basis = np.linalg.qr(rng.normal(size=(d, 2)))[0].T  # two orthonormal cluster directions
    user_cluster = np.array([0] * (spec.num_users // 2) + [1] * (spec.num_users - spec.num_users // 2))
    item_cluster = np.array([0] * (spec.num_items // 2) + [1] * (spec.num_items - spec.num_items // 2))
    user_sig = rng.normal(0.0, spec.signature_scale / np.sqrt(d), size=(spec.num_users, d))
    item_sig = rng.normal(0.0, spec.signature_scale / np.sqrt(d), size=(spec.num_items, d))

    rows: list[RawInteraction] = []
    vectors: dict[int, np.ndarray] = {}
    next_rid = 0
    items_by_cluster = [np.flatnonzero(item_cluster == c) for c in (0, 1)]

    for u in range(spec.num_users):
        own = items_by_cluster[user_cluster[u]]
        other = items_by_cluster[1 - user_cluster[u]]
        n_cross = int(round(spec.interactions_per_user * spec.cross_rate))
        n_own = min(spec.interactions_per_user - n_cross, own.size)
        n_cross = min(n_cross, other.size)
        chosen = np.concatenate(

            [rng.choice(own, size=n_own, replace=False), rng.choice(other, size=n_cross, replace=False)]
        )
        for i in sorted(int(x) for x in chosen):
            has_review = bool(rng.random() < spec.review_rate)
            text = f"review by user {u} about item {i}" if has_review else None
            rows.append(RawInteraction(f"u{u}", f"i{i}", text))
            if has_review:
                base = 0.5 * (basis[user_cluster[u]] + basis[item_cluster[i]])
                vec = base + user_sig[u] + item_sig[i] + rng.normal(0.0, spec.noise_scale / np.sqrt(d), d)
                vectors[next_rid] = vec.astype(np.float32)
                next_rid += 1

    return rows, ReviewEmbeddingStore(dim=d, vectors=vectors)


def write_dataset(rows: list[RawInteraction], store: ReviewEmbeddingStore, outdir: str | Path) -> None:
    """Write interactions.tsv and reviews.remb for CLI-driven runs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "interactions.tsv", "w", encoding="utf-8") as fh:
        for row in rows:
            if row.review_text is None:
                fh.write(f"{row.user_key}\t{row.item_key}\n")
            else:
                fh.write(f"{row.user_key}\t{row.item_key}\t{row.review_text}\n")
    write_embedding_file(store, outdir / "reviews.remb")
