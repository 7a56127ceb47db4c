import numpy as np

from recafr.corpus import RawInteraction, ReviewEmbeddingStore, Triple, InteractionTable


def make_table(triples, num_users=None, num_items=None):
    """Build a table from (user, item, review_id, split) tuples."""
    ts = [Triple(*t) for t in triples]
    nu = num_users if num_users is not None else max(t.user_id for t in ts) + 1
    ni = num_items if num_items is not None else max(t.item_id for t in ts) + 1
    return InteractionTable(num_users=nu, num_items=ni, triples=ts)


def make_store(vectors):
    """Store from {review_id: listlike} with float32 precision."""
    arrs = {rid: np.asarray(v, dtype=np.float32) for rid, v in vectors.items()}
    dim = len(next(iter(arrs.values())))
    return ReviewEmbeddingStore(dim=dim, vectors=arrs)


def rows_from_pairs(pairs, review=None):
    """RawInteractions from (user_key, item_key) pairs, optional shared review text."""
    return [RawInteraction(u, i, review) for u, i in pairs]


def central_difference(loss_fn, arrays, h=1e-6):
    """Central finite-difference gradients of loss_fn() wrt each array in
    ``arrays`` (mutated in place around each evaluation)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn()
            flat[idx] = orig - h
            down = loss_fn()
            flat[idx] = orig
            gflat[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, tol):
    """Per-coordinate mixed absolute/relative comparison."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.abs(analytic - numeric) / scale
    assert err.max() <= tol, f"max gradient error {err.max():.3g} > {tol}"
