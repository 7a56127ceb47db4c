"""Collaborative backbone: trainable embedding tables, inner-product scoring,
optional LightGCN propagation over the train bipartite graph, the pairwise
ranking loss with analytic gradients, and checkpoint I/O.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .corpus import SPLIT_TRAIN, InteractionTable

TABLE_NAMES = ("user_emb", "item_emb", "user_view1", "user_view2", "item_view1", "item_view2")


class NonFiniteError(FloatingPointError):
    """A score, loss, or parameter became NaN/inf."""


@dataclass(frozen=True)
class BackboneKind:
    """Which collaborative model produces the scored embeddings."""

    kind: str  # "mf" | "lightgcn"
    layers: int = 2

    def __post_init__(self) -> None:
        if self.kind not in ("mf", "lightgcn"):
            raise ValueError(f"unknown backbone {self.kind!r}")
        if self.kind == "lightgcn" and self.layers < 1:
            raise ValueError("lightgcn needs layers >= 1")

    @property
    def is_graph(self) -> bool:
        return self.kind == "lightgcn"


@dataclass
class ParameterSet:
    """All trainable tensors, float64.

    View rows are defined only for entities with review-derived vectors;
    ``user_view_count`` / ``item_view_count`` hold 0 (no review vector),
    1 (single pooled review, stored in view1), or 2 (both views).
    Undefined rows stay zero and are never touched by training.
    """

    user_emb: np.ndarray
    item_emb: np.ndarray
    user_view1: np.ndarray
    user_view2: np.ndarray
    item_view1: np.ndarray
    item_view2: np.ndarray
    user_view_count: np.ndarray
    item_view_count: np.ndarray

    @classmethod
    def zeros(cls, num_users: int, num_items: int, dim: int) -> "ParameterSet":
        return cls(
            user_emb=np.zeros((num_users, dim)),
            item_emb=np.zeros((num_items, dim)),
            user_view1=np.zeros((num_users, dim)),
            user_view2=np.zeros((num_users, dim)),
            item_view1=np.zeros((num_items, dim)),
            item_view2=np.zeros((num_items, dim)),
            user_view_count=np.zeros(num_users, dtype=np.int8),
            item_view_count=np.zeros(num_items, dtype=np.int8),
        )

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_emb.shape[0]

    def table(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def view_count(self, side: str) -> np.ndarray:
        return self.user_view_count if side == "user" else self.item_view_count

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            **{name: self.table(name).copy() for name in TABLE_NAMES},
            user_view_count=self.user_view_count.copy(),
            item_view_count=self.item_view_count.copy(),
        )

    def assert_finite(self) -> None:
        for name in TABLE_NAMES:
            if not np.isfinite(self.table(name)).all():
                raise NonFiniteError(f"non-finite entries in {name}")


@dataclass
class GradientBuffer:
    """Dense gradient accumulators plus per-row touched masks.

    Accumulation uses ``np.add.at`` so repeated rows within one call sum
    deterministically in index order.
    """

    grads: dict[str, np.ndarray]
    touched: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "GradientBuffer":
        return cls(
            grads={name: np.zeros_like(params.table(name)) for name in TABLE_NAMES},
            touched={name: np.zeros(params.table(name).shape[0], dtype=bool) for name in TABLE_NAMES},
        )

    def add_rows(self, name: str, rows: np.ndarray, vecs: np.ndarray) -> None:
        np.add.at(self.grads[name], rows, vecs)
        self.touched[name][rows] = True

    def add_dense(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad
        self.touched[name][:] = True

    def add_scaled(self, other: "GradientBuffer", coef: float) -> None:
        for name in TABLE_NAMES:
            rows = np.flatnonzero(other.touched[name])
            if rows.size:
                self.grads[name][rows] += coef * other.grads[name][rows]
                self.touched[name][rows] = True

    def touched_rows(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.touched[name])


def score(e_u: np.ndarray, e_i: np.ndarray) -> float:
    """Ranking score: inner product of the two embeddings."""
    e_u = np.asarray(e_u, dtype=np.float64)
    e_i = np.asarray(e_i, dtype=np.float64)
    if e_u.shape != e_i.shape:
        raise ValueError(f"dim mismatch: {e_u.shape} vs {e_i.shape}")
    return float(e_u @ e_i)


def build_norm_adjacency(table: InteractionTable) -> sp.csr_matrix:
    """Symmetric-normalized bipartite adjacency over train triples.

    Square matrix over user rows then item rows; edge weight is
    1/sqrt(deg_u * deg_i). Isolated nodes get a unit self-loop so that
    propagation leaves their embedding unchanged at every layer.
    """
    n_u, n_i = table.num_users, table.num_items
    n = n_u + n_i
    us, its = [], []
    for t in table.triples:
        if t.split == SPLIT_TRAIN:
            us.append(t.user_id)
            its.append(t.item_id)
    us_arr = np.asarray(us, dtype=np.int64)
    it_arr = np.asarray(its, dtype=np.int64)
    deg = np.zeros(n)
    np.add.at(deg, us_arr, 1.0)
    np.add.at(deg, n_u + it_arr, 1.0)

    weights = 1.0 / np.sqrt(deg[us_arr] * deg[n_u + it_arr]) if len(us) else np.zeros(0)
    rows = np.concatenate([us_arr, n_u + it_arr])
    cols = np.concatenate([n_u + it_arr, us_arr])
    vals = np.concatenate([weights, weights])

    isolated = np.flatnonzero(deg == 0)
    rows = np.concatenate([rows, isolated])
    cols = np.concatenate([cols, isolated])
    vals = np.concatenate([vals, np.ones(isolated.size)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def lightgcn_propagate(
    params: ParameterSet, graph: sp.csr_matrix, layers: int
) -> tuple[np.ndarray, np.ndarray]:
    """Layer-wise neighbor averaging; output is the mean of layers 0..L."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    x = np.vstack([params.user_emb, params.item_emb])
    acc = x.copy()
    cur = x
    for _ in range(layers):
        cur = graph @ cur
        acc += cur
    out = acc / (layers + 1)
    return out[: params.num_users], out[params.num_users :]


def lightgcn_backward(
    graph: sp.csr_matrix, layers: int, grad_user: np.ndarray, grad_item: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Pull output-embedding gradients back to the layer-0 tables."""
    n_u = grad_user.shape[0]
    g = np.vstack([grad_user, grad_item]) / (layers + 1)
    acc = g.copy()
    cur = g
    gt = graph.T.tocsr()
    for _ in range(layers):
        cur = gt @ cur
        acc += cur
    return acc[:n_u], acc[n_u:]


def scored_tables(
    params: ParameterSet, backbone: BackboneKind, graph: sp.csr_matrix | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """The user/item embedding tables the backbone scores with."""
    if backbone.is_graph:
        if graph is None:
            raise ValueError("lightgcn backbone needs the train adjacency")
        return lightgcn_propagate(params, graph, backbone.layers)
    return params.user_emb, params.item_emb


def bpr_loss(
    batch: list[tuple[int, int, int]],
    params: ParameterSet,
    backbone: BackboneKind,
    graph: sp.csr_matrix | None = None,
) -> tuple[float, GradientBuffer]:
    """Pairwise ranking loss over (u, i, j) triples, summed over the batch.

    Per triple the loss is -ln sigmoid(y_ui - y_uj); gradients are analytic
    and, for the graph backbone, composed through the propagation.
    """
    buf = GradientBuffer.zeros_like(params)
    if not batch:
        return 0.0, buf
    arr = np.asarray(batch, dtype=np.int64)
    us, is_, js = arr[:, 0], arr[:, 1], arr[:, 2]

    user_tab, item_tab = scored_tables(params, backbone, graph)
    e_u = user_tab[us]
    e_i = item_tab[is_]
    e_j = item_tab[js]
    delta = np.einsum("bd,bd->b", e_u, e_i - e_j)
    if not np.isfinite(delta).all():
        raise NonFiniteError("non-finite ranking score")
    loss = float(np.logaddexp(0.0, -delta).sum())

    coef = -expit(-delta)  # d(per-triple loss)/d(delta)
    g_u = coef[:, None] * (e_i - e_j)
    g_i = coef[:, None] * e_u
    g_j = -coef[:, None] * e_u

    if backbone.is_graph:
        dense_u = np.zeros_like(params.user_emb)
        dense_i = np.zeros_like(params.item_emb)
        np.add.at(dense_u, us, g_u)
        np.add.at(dense_i, is_, g_i)
        np.add.at(dense_i, js, g_j)
        back_u, back_i = lightgcn_backward(graph, backbone.layers, dense_u, dense_i)
        buf.add_dense("user_emb", back_u)
        buf.add_dense("item_emb", back_i)
    else:
        buf.add_rows("user_emb", us, g_u)
        buf.add_rows("item_emb", is_, g_i)
        buf.add_rows("item_emb", js, g_j)
    return loss, buf


def sample_negative(
    user: int,
    table: InteractionTable,
    rng: np.random.Generator,
    user_items: set[int] | None = None,
) -> int:
    """Uniform item with no train interaction with ``user`` (rejection sampling)."""
    if user_items is None:
        user_items = {t.item_id for t in table.triples if t.split == SPLIT_TRAIN and t.user_id == user}
    if len(user_items) >= table.num_items:
        raise ValueError(f"user {user} interacted with every item; no negative exists")
    while True:
        j = int(rng.integers(table.num_items))
        if j not in user_items:
            return j


# --- RCKP checkpoint format --------------------------------------------------
# magic "RCKP", u32 version=1, u32 dim, u64 |U|, u64 |I|, u32 flags
# (bit 0: user view tables present, bit 1: item view tables present),
# then row-major f32 tables: user_emb, item_emb,
# [user_view1, user_view2], [item_view1, item_view2].

RCKP_MAGIC = b"RCKP"
RCKP_VERSION = 1
_RCKP_HEADER = struct.Struct("<4sIIQQI")


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def save_checkpoint(params: ParameterSet, path: str | Path) -> None:
    flags = 0
    if params.user_view_count.any():
        flags |= 1
    if params.item_view_count.any():
        flags |= 2
    with open(path, "wb") as fh:
        fh.write(
            _RCKP_HEADER.pack(
                RCKP_MAGIC, RCKP_VERSION, params.dim, params.num_users, params.num_items, flags
            )
        )
        fh.write(params.user_emb.astype("<f4").tobytes())
        fh.write(params.item_emb.astype("<f4").tobytes())
        if flags & 1:
            fh.write(params.user_view1.astype("<f4").tobytes())
            fh.write(params.user_view2.astype("<f4").tobytes())
        if flags & 2:
            fh.write(params.item_view1.astype("<f4").tobytes())
            fh.write(params.item_view2.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> ParameterSet:
    """Load a checkpoint for inference.

    View-count masks are not stored in the file; loaded parameters carry
    zero masks and are meant for scoring/evaluation, not resumed training.
    """
    data = Path(path).read_bytes()
    if len(data) < _RCKP_HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, dim, n_u, n_i, flags = _RCKP_HEADER.unpack_from(data, 0)
    if magic != RCKP_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != RCKP_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")

    n_tables = 2 + 2 * bool(flags & 1) + 2 * bool(flags & 2)
    expected = _RCKP_HEADER.size + 4 * dim * (n_u * (1 + 2 * bool(flags & 1)) + n_i * (1 + 2 * bool(flags & 2)))
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes ({n_tables} tables), got {len(data)}")

    params = ParameterSet.zeros(n_u, n_i, dim)
    offset = _RCKP_HEADER.size

    def take(rows: int) -> np.ndarray:
        nonlocal offset
        count = rows * dim
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        return arr.astype(np.float64).reshape(rows, dim)

    params.user_emb = take(n_u)
    params.item_emb = take(n_i)
    if flags & 1:
        params.user_view1 = take(n_u)
        params.user_view2 = take(n_u)
    if flags & 2:
        params.item_view1 = take(n_i)
        params.item_view2 = take(n_i)
    params.assert_finite()
    return params
