"""Training loop: total-loss assembly with the contrastive terms and sparse
L2 regularization, a from-scratch sparse Adam, review-based initialization,
and the epoch loop with validation-based early stopping.

Runs are bit-reproducible: all randomness is derived from the config seed
through fixed-order child streams (init, epoch shuffling, negative
sampling, alignment view choice), and every reduction has a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .backbone import (
    TABLE_NAMES,
    GradientBuffer,
    NonFiniteError,
    ParameterSet,
    bpr_loss,
    build_norm_adjacency,
    sample_negative,
    scored_tables,
)
from .config import TrainConfig
from .contrastive import (
    ContrastiveBatch,
    alignment_loss,
    eligible_alignment_entities,
    eligible_review_entities,
    review_contrastive_loss,
)
from .corpus import SPLIT_TRAIN, InteractionTable, ReviewEmbeddingStore
from .views import ReviewSets, ViewAssignment, dummy_vector, init_entity_embedding, pool_view


@dataclass
class AdamState:
    """First/second moment accumulators per table plus one step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "AdamState":
        return cls(
            m={name: np.zeros_like(params.table(name)) for name in TABLE_NAMES},
            v={name: np.zeros_like(params.table(name)) for name in TABLE_NAMES},
        )


def adam_step(
    params: ParameterSet,
    grads: GradientBuffer,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update applied to touched rows only, in place."""
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name in TABLE_NAMES:
        rows = grads.touched_rows(name)
        if rows.size == 0:
            continue
        g = grads.grads[name][rows]
        m = state.m[name]
        v = state.v[name]
        m[rows] = beta1 * m[rows] + (1.0 - beta1) * g
        v[rows] = beta2 * v[rows] + (1.0 - beta2) * (g * g)
        m_hat = m[rows] / bc1
        v_hat = v[rows] / bc2
        params.table(name)[rows] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.assert_finite()


@dataclass
class LossBreakdown:
    """Per-term values as they enter the total (anchor/batch means)."""

    cf: float = 0.0
    cf_sum: float = 0.0
    rev_user: float = 0.0
    rev_item: float = 0.0
    align_user: float = 0.0
    align_item: float = 0.0
    reg: float = 0.0
    total: float = 0.0

    @property
    def rev(self) -> float:
        return self.rev_user + self.rev_item

    @property
    def align(self) -> float:
        return self.align_user + self.align_item


def _batch_entities(batch: Sequence[tuple[int, int, int]]) -> tuple[list[int], list[int]]:
    users = sorted({u for u, _, _ in batch})
    items = sorted({x for _, i, j in batch for x in (i, j)})
    return users, items


def total_loss(
    batch: Sequence[tuple[int, int, int]],
    params: ParameterSet,
    cfg: TrainConfig,
    graph: sp.csr_matrix | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[LossBreakdown, GradientBuffer]:
    """Assemble the joint objective for one batch of (u, i, j) triples.

    total = mean ranking loss
          + lambda1 * (mean view-agreement loss, user + item sides)
          + lambda2 * (mean alignment loss, user + item sides)
          + lambda3 * sum of squared norms of the rows this batch touches.

    Contrastive pools are the batch's users/items (or every eligible
    entity when cfg.full_normalization). Ablation switches drop the
    corresponding side's contrastive terms entirely.
    """
    if not batch:
        raise ValueError("empty batch")
    br = LossBreakdown()
    total = GradientBuffer.zeros_like(params)

    cf_sum, cf_buf = bpr_loss(list(batch), params, cfg.backbone_kind(), graph)
    br.cf_sum = cf_sum
    br.cf = cf_sum / len(batch)
    total.add_scaled(cf_buf, 1.0 / len(batch))

    batch_users, batch_items = _batch_entities(batch)
    all_users = range(params.num_users)
    all_items = range(params.num_items)
    sides = (
        ("user", batch_users if not cfg.full_normalization else all_users),
        ("item", batch_items if not cfg.full_normalization else all_items),
    )
    side_enabled = {"user": not cfg.no_user_cl, "item": not cfg.no_item_cl}

    # rows entering the sparse L2 term: the rows this batch gathers directly
    reg_rows: dict[str, set[int]] = {name: set() for name in TABLE_NAMES}
    reg_rows["user_emb"].update(batch_users)
    reg_rows["item_emb"].update(batch_items)

    if cfg.lambda1 > 0:
        for side, entities in sides:
            if not side_enabled[side]:
                continue
            pool = eligible_review_entities(params, side, list(entities))
            cb = ContrastiveBatch(tuple(pool), tuple(pool), cfg.tau)
            loss_sum, buf = review_contrastive_loss(side, cb, params)
            mean = loss_sum / len(pool) if pool else 0.0
            setattr(br, f"rev_{side}", mean)
            if pool:
                total.add_scaled(buf, cfg.lambda1 / len(pool))
                for name in TABLE_NAMES:
                    reg_rows[name].update(buf.touched_rows(name).tolist())

    if cfg.lambda2 > 0:
        if rng is None:
            raise ValueError("alignment loss needs an rng for the view choice")
        for side, entities in sides:
            if not side_enabled[side]:
                continue
            pool = eligible_alignment_entities(params, side, list(entities))
            cb = ContrastiveBatch(tuple(pool), tuple(pool), cfg.tau)
            loss_sum, buf = alignment_loss(side, cb, params, rng)
            mean = loss_sum / len(pool) if pool else 0.0
            setattr(br, f"align_{side}", mean)
            if pool:
                total.add_scaled(buf, cfg.lambda2 / len(pool))
                for name in TABLE_NAMES:
                    reg_rows[name].update(buf.touched_rows(name).tolist())

    if cfg.lambda3 > 0:
        reg = 0.0
        for name in TABLE_NAMES:
            rows = np.asarray(sorted(reg_rows[name]), dtype=np.int64)
            if rows.size == 0:
                continue
            values = params.table(name)[rows]
            reg += float((values * values).sum())
            total.add_rows(name, rows, 2.0 * cfg.lambda3 * values)
        br.reg = cfg.lambda3 * reg

    br.total = (
        br.cf
        + cfg.lambda1 * (br.rev_user + br.rev_item)
        + cfg.lambda2 * (br.align_user + br.align_item)
        + br.reg
    )
    if not np.isfinite(br.total):
        raise NonFiniteError(
            f"non-finite total loss (cf={br.cf}, rev={br.rev}, align={br.align}, reg={br.reg})"
        )
    return br, total


def initialize_params(
    table: InteractionTable,
    sets: ReviewSets,
    views: ViewAssignment,
    store: ReviewEmbeddingStore,
    cfg: TrainConfig,
    seed,
) -> ParameterSet:
    """Build the initial parameter tables.

    Collaborative rows are the mean of the entity's review vectors (dummy
    jitter when there are none), or Xavier-uniform when cfg.no_text_init.
    View rows are pooled per sampled view; an entity with exactly one
    review stores its pooled review in view1.
    """
    if store.dim != cfg.dim:
        raise ValueError(
            f"embedding store dim {store.dim} != configured dim {cfg.dim}; "
            "project the review embedding file to the model dimension first "
            "(the embed-prep tool's --dim/--proj flags do this)"
        )
    rng = np.random.default_rng(seed)
    params = ParameterSet.zeros(table.num_users, table.num_items, cfg.dim)

    for emb, reviews in ((params.user_emb, sets.user_reviews), (params.item_emb, sets.item_reviews)):
        n = emb.shape[0]
        if cfg.no_text_init:
            limit = np.sqrt(6.0 / (n + cfg.dim))
            emb[:] = rng.uniform(-limit, limit, size=emb.shape)
        else:
            for entity in range(n):
                revs = reviews.get(entity, [])
                emb[entity] = init_entity_embedding(revs, store, dummy_vector(cfg.dim, rng))

    for side, reviews, assigned in (
        ("user", sets.user_reviews, views.user_views),
        ("item", sets.item_reviews, views.item_views),
    ):
        view1 = params.table(f"{side}_view1")
        view2 = params.table(f"{side}_view2")
        counts = params.view_count(side)
        for entity in range(view1.shape[0]):
            if entity in assigned:
                v1, v2 = assigned[entity]
                view1[entity] = pool_view(v1, store)
                view2[entity] = pool_view(v2, store)
                counts[entity] = 2
            elif len(reviews.get(entity, [])) == 1:
                view1[entity] = pool_view(reviews[entity], store)
                counts[entity] = 1
    params.assert_finite()
    return params


@dataclass
class TrainResult:
    params: ParameterSet  # best-validation trainable parameters
    inference_params: ParameterSet  # backbone output tables (propagated for lightgcn)
    final_params: ParameterSet  # last completed optimizer state
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_ndcg5: float = 0.0
    diverged: bool = False


def derive_rngs(seed: int) -> tuple[np.random.Generator, ...]:
    """Fixed-order child streams: (init, shuffle, negatives, alignment)."""
    children = np.random.SeedSequence(seed).spawn(4)
    return tuple(np.random.default_rng(c) for c in children)


def inference_parameters(
    params: ParameterSet, cfg: TrainConfig, graph: sp.csr_matrix | None
) -> ParameterSet:
    """Materialize the backbone's output embeddings for scoring."""
    kind = cfg.backbone_kind()
    if not kind.is_graph:
        return params
    out = params.copy()
    out.user_emb, out.item_emb = scored_tables(params, kind, graph)
    return out


def train(
    table: InteractionTable,
    sets: ReviewSets,
    views: ViewAssignment,
    store: ReviewEmbeddingStore,
    cfg: TrainConfig,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run the optimization loop and return the best-validation checkpoint.

    Per epoch: shuffle the train (u, i) pairs, redraw one negative per
    pair, take mini-batches through total_loss/adam_step, then measure
    NDCG@5 on the validation split. Early-stops after cfg.patience epochs
    without improvement. A non-finite loss aborts with the last good
    checkpoint and sets ``diverged``.
    """
    from .evaluation import evaluate  # local import to avoid a module cycle

    rng_init, rng_shuffle, rng_neg, rng_align = derive_rngs(cfg.seed)
    params = initialize_params(table, sets, views, store, cfg, rng_init)
    kind = cfg.backbone_kind()
    graph = build_norm_adjacency(table) if kind.is_graph else None

    train_pairs = [(t.user_id, t.item_id) for t in table.triples if t.split == SPLIT_TRAIN]
    if not train_pairs:
        raise ValueError("no train interactions")
    user_items = table.user_items(SPLIT_TRAIN)

    state = AdamState.zeros_like(params)
    best_params = params.copy()
    best_ndcg = -np.inf
    best_epoch = 0
    epochs_since_best = 0
    history: list[dict] = []
    diverged = False

    for epoch in range(1, cfg.epochs + 1):
        order = rng_shuffle.permutation(len(train_pairs))
        sums = {"total": 0.0, "cf": 0.0, "rev": 0.0, "align": 0.0}
        batches = 0
        try:
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start : start + cfg.batch_size]
                batch = []
                for idx in chunk:
                    u, i = train_pairs[idx]
                    j = sample_negative(u, table, rng_neg, user_items[u])
                    batch.append((u, i, j))
                br, grads = total_loss(batch, params, cfg, graph, rng_align)
                adam_step(params, grads, state, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
                sums["total"] += br.total
                sums["cf"] += br.cf
                sums["rev"] += br.rev
                sums["align"] += br.align
                batches += 1
        except NonFiniteError:
            diverged = True

        if diverged:
            break

        infer = inference_parameters(params, cfg, graph)
        try:
            report = evaluate(infer, table, ks=(5,), split="valid")
            valid_ndcg5 = report.cutoffs[5].ndcg_mean
        except ValueError:
            valid_ndcg5 = 0.0  # no evaluable validation users

        record = {
            "epoch": epoch,
            "train_loss": sums["total"] / batches,
            "L_cf": sums["cf"] / batches,
            "L_rev": sums["rev"] / batches,
            "L_align": sums["align"] / batches,
            "valid_ndcg5": valid_ndcg5,
        }
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)

        if valid_ndcg5 > best_ndcg:
            best_ndcg = valid_ndcg5
            best_params = params.copy()
            best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= cfg.patience:
                break

    if best_ndcg == -np.inf:
        best_ndcg = 0.0
    return TrainResult(
        params=best_params,
        inference_params=inference_parameters(best_params, cfg, graph),
        final_params=best_params if diverged else params,
        history=history,
        best_epoch=best_epoch,
        best_valid_ndcg5=float(best_ndcg),
        diverged=diverged,
    )
