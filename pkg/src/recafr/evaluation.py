"""Top-K inference and ranking metrics averaged over test users, the
missing-review robustness sweep, and the pre-training similarity
distribution analysis of positive vs. negative view pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .backbone import ParameterSet
from .config import TrainConfig
from .contrastive import cosine_sim
from .corpus import SPLIT_TRAIN, SPLIT_VALID, SPLIT_TEST, InteractionTable, ReviewEmbeddingStore
from .views import ReviewSets, ViewAssignment, mask_reviews, pool_view, sample_views

PILOT_BINS = 64


def recommend_topk(
    user: int, params: ParameterSet, k: int, exclusions: set[int] | frozenset[int] = frozenset()
) -> list[int]:
    """Top-k item ids for a user: score descending, ties by ascending id.

    Excluded items (the user's train items) never appear; k must not
    exceed the number of rankable items.
    """
    num_items = params.num_items
    available = num_items - len(exclusions)
    if k < 1 or k > available:
        raise ValueError(f"k={k} outside [1, {available}] rankable items")
    scores = params.item_emb @ params.user_emb[user]
    if exclusions:
        scores = scores.copy()
        scores[np.fromiter(exclusions, dtype=np.int64)] = -np.inf
    order = np.lexsort((np.arange(num_items), -scores))
    return [int(i) for i in order[:k]]


def metrics_at_k(ranked: list[int], relevant: set[int], k: int) -> tuple[float, float, float]:
    """(recall, precision, ndcg) at cutoff k with binary relevance.

    recall = hits/|relevant|, precision = hits/k, ndcg = dcg/idcg with
    gain 1/log2(rank+1) and the ideal over min(k, |relevant|) hits. A
    ranking shorter than k counts its missing tail slots as misses.
    """
    if not relevant:
        raise ValueError("relevant set is empty; skip this user instead")
    if k < 1:
        raise ValueError("k must be >= 1")
    top = ranked[:k]
    hit_ranks = [rank for rank, item in enumerate(top, start=1) if item in relevant]
    dcg = sum(1.0 / np.log2(rank + 1) for rank in hit_ranks)
    ideal = min(k, len(relevant))
    idcg = sum(1.0 / np.log2(rank + 1) for rank in range(1, ideal + 1))
    return len(hit_ranks) / len(relevant), len(hit_ranks) / k, dcg / idcg


@dataclass
class CutoffMetrics:
    recall_mean: float
    precision_mean: float
    ndcg_mean: float
    recall: np.ndarray
    precision: np.ndarray
    ndcg: np.ndarray


@dataclass
class MetricsReport:
    cutoffs: dict[int, CutoffMetrics]
    num_users_evaluated: int
    user_ids: list[int]


def evaluate(
    params: ParameterSet,
    table: InteractionTable,
    ks: tuple[int, ...] = (5, 20),
    split: str = SPLIT_TEST,
    exclude_valid: bool = False,
) -> MetricsReport:
    """Per-user metrics over users with at least one item in ``split``,
    then arithmetic means in ascending user order.

    Ranking candidates exclude the user's train items (plus validation
    items when ``exclude_valid``).
    """
    relevant: dict[int, set[int]] = {}
    for t in table.triples:
        if t.split == split:
            relevant.setdefault(t.user_id, set()).add(t.item_id)
    train_items = table.user_items(SPLIT_TRAIN)
    valid_items = table.user_items(SPLIT_VALID) if exclude_valid else None

    kmax = max(ks)
    per_user: dict[int, list[tuple[float, float, float]]] = {k: [] for k in ks}
    users: list[int] = []
    for user in sorted(relevant):
        exclusions = set(train_items[user])
        if valid_items is not None:
            exclusions |= valid_items[user]
        available = table.num_items - len(exclusions)
        if available < 1:
            continue
        ranked = recommend_topk(user, params, min(kmax, available), exclusions)
        users.append(user)
        for k in ks:
            per_user[k].append(metrics_at_k(ranked, relevant[user], k))

    if not users:
        raise ValueError(f"no evaluable users in split {split!r}")

    cutoffs: dict[int, CutoffMetrics] = {}
    for k in ks:
        arr = np.asarray(per_user[k])
        cutoffs[k] = CutoffMetrics(
            recall_mean=float(arr[:, 0].mean()),
            precision_mean=float(arr[:, 1].mean()),
            ndcg_mean=float(arr[:, 2].mean()),
            recall=arr[:, 0].copy(),
            precision=arr[:, 1].copy(),
            ndcg=arr[:, 2].copy(),
        )
    return MetricsReport(cutoffs=cutoffs, num_users_evaluated=len(users), user_ids=users)


def write_metrics_json(report: MetricsReport, path: str | Path) -> None:
    payload = {
        str(k): {
            "recall": m.recall_mean,
            "precision": m.precision_mean,
            "ndcg": m.ndcg_mean,
            "n_users": report.num_users_evaluated,
        }
        for k, m in sorted(report.cutoffs.items())
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- missing-review robustness ----------------------------------------------


@dataclass
class RobustnessRun:
    fraction: float
    seed: int
    report: MetricsReport
    history: list[dict]


def robustness_sweep(
    table: InteractionTable,
    sets: ReviewSets,
    store: ReviewEmbeddingStore,
    cfg: TrainConfig,
    fractions: list[float],
    seeds: list[int],
    ks: tuple[int, ...] = (5, 20),
) -> list[RobustnessRun]:
    """Re-mask, re-train, and re-evaluate for each (fraction, seed).

    Masking happens before view sampling and before initialization, so each
    run trains as if the removed reviews never existed.
    """
    from .trainer import train  # local import to avoid a module cycle

    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    runs: list[RobustnessRun] = []
    for fraction in fractions:
        for seed in seeds:
            run_cfg = dc_replace(cfg, seed=seed)
            masked = mask_reviews(sets, fraction, seed=seed)
            views = sample_views(masked, seed=seed)
            result = train(table, masked, views, store, run_cfg)
            report = evaluate(result.inference_params, table, ks=ks)
            runs.append(RobustnessRun(fraction, seed, report, result.history))
    return runs


def write_robustness_tsv(runs: list[RobustnessRun], path: str | Path, ks: tuple[int, ...] = (5, 20)) -> None:
    """Per-seed rows plus one aggregated mean row per fraction."""
    header = ["fraction", "seed"]
    for k in ks:
        header += [f"recall@{k}", f"precision@{k}", f"ndcg@{k}"]
    lines = ["\t".join(header)]

    def metric_row(report: MetricsReport) -> list[float]:
        row: list[float] = []
        for k in ks:
            m = report.cutoffs[k]
            row += [m.recall_mean, m.precision_mean, m.ndcg_mean]
        return row

    by_fraction: dict[float, list[list[float]]] = {}
    for run in runs:
        row = metric_row(run.report)
        by_fraction.setdefault(run.fraction, []).append(row)
        lines.append("\t".join([f"{run.fraction:g}", str(run.seed)] + [f"{x:.6f}" for x in row]))
    for fraction in sorted(by_fraction):
        mean = np.asarray(by_fraction[fraction]).mean(axis=0)
        lines.append("\t".join([f"{fraction:g}", "mean"] + [f"{x:.6f}" for x in mean]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- pre-training similarity distributions -----------------------------------


@dataclass
class SimilarityDistribution:
    """Histogram (64 bins over [-1, 1]) plus moments, for positive pairs
    (two views of one entity) and negative pairs (views of different ones)."""

    bin_edges: np.ndarray
    pos_counts: np.ndarray
    pos_mean: float
    pos_std: float
    neg_counts: np.ndarray
    neg_mean: float
    neg_std: float


@dataclass
class PilotReport:
    user: SimilarityDistribution
    item: SimilarityDistribution


def _side_distribution(
    assigned: dict[int, tuple[tuple[int, ...], tuple[int, ...]]],
    store: ReviewEmbeddingStore,
    sample_size: int,
    rng: np.random.Generator,
) -> SimilarityDistribution:
    entities = sorted(assigned)
    if len(entities) < 2:
        raise ValueError("need at least 2 entities with view assignments")
    h1 = {e: pool_view(assigned[e][0], store) for e in entities}
    h2 = {e: pool_view(assigned[e][1], store) for e in entities}

    positives = np.array([cosine_sim(h1[e], h2[e]) for e in entities])
    negatives: list[float] = []
    arr = np.asarray(entities)
    for idx, e in enumerate(entities):
        others = np.delete(arr, idx)
        picks = rng.choice(others, size=min(sample_size, others.size), replace=False)
        negatives.extend(cosine_sim(h1[e], h2[int(o)]) for o in picks)
    negatives_arr = np.asarray(negatives)

    edges = np.linspace(-1.0, 1.0, PILOT_BINS + 1)
    pos_counts, _ = np.histogram(np.clip(positives, -1.0, 1.0), bins=edges)
    neg_counts, _ = np.histogram(np.clip(negatives_arr, -1.0, 1.0), bins=edges)
    return SimilarityDistribution(
        bin_edges=edges,
        pos_counts=pos_counts,
        pos_mean=float(positives.mean()),
        pos_std=float(positives.std()),
        neg_counts=neg_counts,
        neg_mean=float(negatives_arr.mean()),
        neg_std=float(negatives_arr.std()),
    )


def pilot_distributions(
    views: ViewAssignment, store: ReviewEmbeddingStore, sample_size: int = 50, seed: int = 0
) -> PilotReport:
    """Similarity distributions of the initial pooled view vectors.

    Positive similarity cos(h1_x, h2_x) for every assigned entity; negative
    similarities cos(h1_x, h2_x') for ``sample_size`` sampled x' != x.
    """
    rng = np.random.default_rng(seed)
    return PilotReport(
        user=_side_distribution(views.user_views, store, sample_size, rng),
        item=_side_distribution(views.item_views, store, sample_size, rng),
    )


def write_pilot_tsv(report: PilotReport, path: str | Path) -> None:
    lines = ["side\tbin_lo\tbin_hi\tpos_count\tneg_count"]
    for side, dist in (("user", report.user), ("item", report.item)):
        for b in range(PILOT_BINS):
            lines.append(
                f"{side}\t{dist.bin_edges[b]:.6f}\t{dist.bin_edges[b + 1]:.6f}"
                f"\t{int(dist.pos_counts[b])}\t{int(dist.neg_counts[b])}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
