"""Per-entity review sets, disjoint two-way view sampling, mean pooling,
review-based initialization vectors, and review masking for robustness runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusError, InteractionTable, ReviewEmbeddingStore


@dataclass
class ReviewSets:
    """Review ids grouped by owning user and by reviewed item.

    Every review id appears in exactly one user's list and exactly one
    item's list. Entities without reviewed interactions map to empty lists.
    """

    user_reviews: dict[int, list[int]]
    item_reviews: dict[int, list[int]]

    def total_reviews(self) -> int:
        return sum(len(v) for v in self.user_reviews.values())


@dataclass(frozen=True)
class ViewAssignment:
    """Two disjoint equal-size review views per entity with >= 2 reviews."""

    user_views: dict[int, tuple[tuple[int, ...], tuple[int, ...]]]
    item_views: dict[int, tuple[tuple[int, ...], tuple[int, ...]]]

    def views_for(self, side: str) -> dict[int, tuple[tuple[int, ...], tuple[int, ...]]]:
        if side == "user":
            return self.user_views
        if side == "item":
            return self.item_views
        raise ValueError(f"unknown side {side!r}")


def build_review_sets(table: InteractionTable) -> ReviewSets:
    """Group the table's review ids by user and by item."""
    user_reviews: dict[int, list[int]] = {u: [] for u in range(table.num_users)}
    item_reviews: dict[int, list[int]] = {i: [] for i in range(table.num_items)}
    seen: set[int] = set()
    for t in table.triples:
        if t.review_id is None:
            continue
        if t.review_id in seen:
            raise CorpusError(f"review id {t.review_id} attached to more than one interaction")
        seen.add(t.review_id)
        user_reviews[t.user_id].append(t.review_id)
        item_reviews[t.item_id].append(t.review_id)
    return ReviewSets(user_reviews, item_reviews)


def _assign_side(
    reviews: dict[int, list[int]], rng: np.random.Generator
) -> dict[int, tuple[tuple[int, ...], tuple[int, ...]]]:
    out: dict[int, tuple[tuple[int, ...], tuple[int, ...]]] = {}
    for entity in sorted(reviews):
        revs = reviews[entity]
        n = len(revs)
        if n < 2:
            continue
        perm = rng.permutation(n)
        half = n // 2
        view1 = tuple(revs[p] for p in perm[:half])
        view2 = tuple(revs[p] for p in perm[half : 2 * half])
        out[entity] = (view1, view2)
    return out


def sample_views(sets: ReviewSets, seed: int) -> ViewAssignment:
    """Sample two disjoint equal-size views per entity, once, before training.

    Entities with n >= 2 reviews get floor(n/2) reviews per view (the odd
    leftover is dropped); entities with fewer reviews get no assignment.
    Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    return ViewAssignment(
        user_views=_assign_side(sets.user_reviews, rng),
        item_views=_assign_side(sets.item_reviews, rng),
    )


def pool_view(view: list[int] | tuple[int, ...], store: ReviewEmbeddingStore) -> np.ndarray:
    """Component-wise mean of the view's review vectors, in float64."""
    if not view:
        raise CorpusError("cannot pool an empty view")
    stacked = np.stack([store.vector(rid) for rid in view]).astype(np.float64)
    return stacked.mean(axis=0)


def init_entity_embedding(
    entity_reviews: list[int] | tuple[int, ...],
    store: ReviewEmbeddingStore,
    dummy: np.ndarray,
) -> np.ndarray:
    """Mean of all the entity's review vectors, or the dummy vector if none."""
    if not entity_reviews:
        return np.asarray(dummy, dtype=np.float64).copy()
    return pool_view(entity_reviews, store)


def dummy_vector(dim: int, rng: np.random.Generator, jitter: float = 0.01) -> np.ndarray:
    """Zeros plus small Gaussian jitter so review-less entities don't collapse."""
    return rng.normal(0.0, jitter, size=dim)


def mask_reviews(sets: ReviewSets, fraction: float, seed: int) -> ReviewSets:
    """Uniformly remove floor(fraction * total) distinct reviews from both sides."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    all_ids = sorted(rid for revs in sets.user_reviews.values() for rid in revs)
    n_remove = int(np.floor(fraction * len(all_ids)))
    rng = np.random.default_rng(seed)
    removed: set[int] = set()
    if all_ids and n_remove:
        removed = set(int(r) for r in rng.choice(all_ids, size=n_remove, replace=False))
    return ReviewSets(
        user_reviews={u: [r for r in revs if r not in removed] for u, revs in sets.user_reviews.items()},
        item_reviews={i: [r for r in revs if r not in removed] for i, revs in sets.item_reviews.items()},
    )


def write_views_tsv(views: ViewAssignment, path: str | Path) -> None:
    """Debug dump: entity_kind, entity_id, view_index, review_ids (csv)."""
    with open(path, "w", encoding="utf-8") as fh:
        for kind, assigned in (("user", views.user_views), ("item", views.item_views)):
            for entity in sorted(assigned):
                for view_index, view in enumerate(assigned[entity], start=1):
                    ids = ",".join(str(r) for r in view)
                    fh.write(f"{kind}\t{entity}\t{view_index}\t{ids}\n")
