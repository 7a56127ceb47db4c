"""Contrastive objectives: cosine similarity, the InfoNCE kernel, the
review-view loss (two views of one entity form the positive pair) and the
alignment loss (collaborative embedding vs. review-based embedding), both
with softmax-style in-batch negatives and analytic gradients.

Gradient notation: with s_c = cos(a, c) and softmax weights w over s/tau,
dL/ds_p = (w_p - 1)/tau, dL/ds_n = w_n/tau, and
d cos(a, c)/da = (c_hat - cos(a,c) * a_hat) / ||a||.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbone import GradientBuffer, ParameterSet


@dataclass(frozen=True)
class ContrastiveBatch:
    """Anchors plus the distinct candidate pool (each anchor's positive is
    its own entry in the pool)."""

    anchors: tuple[int, ...]
    pool: tuple[int, ...]
    tau: float

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if len(set(self.pool)) != len(self.pool):
            raise ValueError("pool entries must be distinct")
        if not set(self.anchors) <= set(self.pool):
            raise ValueError("every anchor must appear in the pool")


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(a @ b / (na * nb))


def info_nce(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: Sequence[np.ndarray],
    tau: float,
) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """Softmax contrastive loss for one anchor.

    Returns (loss, grad wrt anchor, grads wrt candidates) where the
    candidate list is [positive, *negatives]. Stabilized by max-subtraction.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    anchor = np.asarray(anchor, dtype=np.float64)
    cands = [np.asarray(positive, dtype=np.float64)] + [
        np.asarray(n, dtype=np.float64) for n in negatives
    ]
    if not cands:
        raise ValueError("candidate set is empty")

    na = np.linalg.norm(anchor)
    if na == 0.0:
        raise ValueError("zero-norm anchor")
    norms = np.array([np.linalg.norm(c) for c in cands])
    if (norms == 0.0).any():
        raise ValueError("zero-norm candidate")
    a_hat = anchor / na
    c_hat = np.stack(cands) / norms[:, None]
    sims = c_hat @ a_hat

    logits = sims / tau
    m = logits.max()
    exps = np.exp(logits - m)
    lse = m + np.log(exps.sum())
    loss = float(lse - logits[0])

    d_sim = (exps / exps.sum()) / tau
    d_sim[0] -= 1.0 / tau
    grad_anchor = (d_sim @ c_hat - float(d_sim @ sims) * a_hat) / na
    grad_cands = [
        d_sim[k] * (a_hat - sims[k] * c_hat[k]) / norms[k] for k in range(len(cands))
    ]
    return loss, grad_anchor, grad_cands


def _normalized(rows: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    if (norms == 0.0).any():
        raise ValueError(f"zero-norm {what} vector")
    return rows / norms[:, None], norms


def _nce_matrix(
    anchors_mat: np.ndarray, cands_mat: np.ndarray, pos_col: np.ndarray, tau: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed InfoNCE over rows of ``anchors_mat`` against all candidate rows.

    ``pos_col[i]`` is the candidate column holding anchor i's positive.
    Returns (loss_sum, grad wrt anchor rows, grad wrt candidate rows).
    """
    a_hat, a_norm = _normalized(anchors_mat, "anchor")
    c_hat, c_norm = _normalized(cands_mat, "candidate")
    sims = a_hat @ c_hat.T
    logits = sims / tau
    m = logits.max(axis=1, keepdims=True)
    exps = np.exp(logits - m)
    lse = m[:, 0] + np.log(exps.sum(axis=1))
    rows = np.arange(anchors_mat.shape[0])
    loss = float((lse - logits[rows, pos_col]).sum())

    d_sim = exps / exps.sum(axis=1, keepdims=True) / tau
    d_sim[rows, pos_col] -= 1.0 / tau
    grad_anchor = (d_sim @ c_hat - (d_sim * sims).sum(axis=1, keepdims=True) * a_hat) / a_norm[:, None]
    grad_cands = (d_sim.T @ a_hat - (d_sim * sims).sum(axis=0)[:, None] * c_hat) / c_norm[:, None]
    return loss, grad_anchor, grad_cands


def _side_tables(side: str) -> tuple[str, str, str]:
    if side == "user":
        return "user_emb", "user_view1", "user_view2"
    if side == "item":
        return "item_emb", "item_view1", "item_view2"
    raise ValueError(f"unknown side {side!r}")


def eligible_review_entities(params: ParameterSet, side: str, entities: Sequence[int]) -> list[int]:
    """Entities with both views, sorted and deduplicated."""
    counts = params.view_count(side)
    return sorted({int(e) for e in entities if counts[e] == 2})


def eligible_alignment_entities(params: ParameterSet, side: str, entities: Sequence[int]) -> list[int]:
    """Entities with at least one review-based vector, sorted and deduplicated."""
    counts = params.view_count(side)
    return sorted({int(e) for e in entities if counts[e] >= 1})


def review_contrastive_loss(
    side: str, batch: ContrastiveBatch, params: ParameterSet
) -> tuple[float, GradientBuffer]:
    """Summed view-agreement loss: anchor view1 against the pool's view2 rows.

    Entities without a view assignment must not appear in the batch; the
    loss over an empty anchor set is 0.
    """
    _, view1_name, view2_name = _side_tables(side)
    buf = GradientBuffer.zeros_like(params)
    if not batch.anchors:
        return 0.0, buf
    counts = params.view_count(side)
    pool = np.asarray(batch.pool, dtype=np.int64)
    anchors = np.asarray(batch.anchors, dtype=np.int64)
    if (counts[pool] != 2).any():
        raise ValueError(f"{side} pool contains entities without a view pair")

    col_of = {int(e): k for k, e in enumerate(pool)}
    pos_col = np.asarray([col_of[int(a)] for a in anchors])
    loss, g_anchor, g_cands = _nce_matrix(
        params.table(view1_name)[anchors], params.table(view2_name)[pool], pos_col, batch.tau
    )
    buf.add_rows(view1_name, anchors, g_anchor)
    buf.add_rows(view2_name, pool, g_cands)
    return loss, buf


def choose_alignment_views(
    params: ParameterSet, side: str, pool: Sequence[int], rng: np.random.Generator
) -> np.ndarray:
    """Fair-coin view choice per pool entity; single-review entities always
    use their pooled review (stored in view1)."""
    counts = params.view_count(side)
    choice = np.zeros(len(pool), dtype=np.int64)
    for k, entity in enumerate(pool):
        c = counts[entity]
        if c == 2:
            choice[k] = int(rng.integers(2))
        elif c != 1:
            raise ValueError(f"{side} {entity} has no review-based vector")
    return choice


def alignment_loss(
    side: str,
    batch: ContrastiveBatch,
    params: ParameterSet,
    rng: np.random.Generator,
) -> tuple[float, GradientBuffer]:
    """Summed alignment loss: collaborative row e_x against the review-based
    row h_x, normalized over the pool's review-based rows.

    h_x is view1 or view2, redrawn per call; gradients flow to the e table
    and to the selected view rows.
    """
    emb_name, view1_name, view2_name = _side_tables(side)
    buf = GradientBuffer.zeros_like(params)
    if not batch.anchors:
        return 0.0, buf
    pool = np.asarray(batch.pool, dtype=np.int64)
    anchors = np.asarray(batch.anchors, dtype=np.int64)

    choice = choose_alignment_views(params, side, pool, rng)
    view_names = (view1_name, view2_name)
    h_rows = np.where(
        (choice == 0)[:, None], params.table(view1_name)[pool], params.table(view2_name)[pool]
    )

    col_of = {int(e): k for k, e in enumerate(pool)}
    pos_col = np.asarray([col_of[int(a)] for a in anchors])
    loss, g_anchor, g_cands = _nce_matrix(params.table(emb_name)[anchors], h_rows, pos_col, batch.tau)
    buf.add_rows(emb_name, anchors, g_anchor)
    for k in (0, 1):
        sel = np.flatnonzero(choice == k)
        if sel.size:
            buf.add_rows(view_names[k], pool[sel], g_cands[sel])
    return loss, buf
