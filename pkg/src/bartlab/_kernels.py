"""Low-level routing and leaf-statistics kernels.

Each kernel has a numba implementation and a vectorized numpy twin; the twin is
used when numba is disabled through ``BARTLAB_DISABLE_NUMBA``.
"""

import numpy as np

from ._accel import USE_NUMBA, jit


@jit
def _route_nb(X, feat, thr, left, right, leaf_id, out, start=0):
    n = X.shape[0]
    for i in range(n):
        node = start
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = leaf_id[node]
    return out


def _route_np(X, feat, thr, left, right, leaf_id, out, start=0):
    node = np.full(X.shape[0], start, dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = feat[node]
        active = f >= 0
        if not active.any():
            break
        go_left = X[rows, np.where(active, f, 0)] <= thr[node]
        nxt = np.where(go_left, left[node], right[node])
        node = np.where(active, nxt, node)
    out[:] = leaf_id[node]
    return out


def route(X, feat, thr, left, right, leaf_id, start=0):
    """Leaf id reached by every row of ``X`` in a flattened tree (node 0 = root).

    Routing begins at node ``start``; ``feat < 0`` marks a leaf.
    """
    out = np.empty(X.shape[0], dtype=np.int64)
    if USE_NUMBA:
        return _route_nb(X, feat, thr, left, right, leaf_id, out, start)
    return _route_np(X, feat, thr, left, right, leaf_id, out, start)


@jit
def _leaf_sums_nb(leaf, r, n_leaves, counts, sums):
    for i in range(leaf.shape[0]):
        counts[leaf[i]] += 1
        sums[leaf[i]] += r[i]
    return counts, sums


def leaf_sums(leaf, r, n_leaves):
    """Row count and residual sum per leaf."""
    if USE_NUMBA:
        counts = np.zeros(n_leaves, dtype=np.int64)
        sums = np.zeros(n_leaves)
        return _leaf_sums_nb(leaf, np.asarray(r, dtype=float), n_leaves, counts, sums)
    counts = np.bincount(leaf, minlength=n_leaves).astype(np.int64)
    sums = np.bincount(leaf, weights=r, minlength=n_leaves)
    return counts, sums
