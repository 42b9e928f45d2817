"""One backfitting sweep of the default sampler over an array-pooled forest.

Tree ``j`` lives in row ``j`` of the pool arrays. ``feat`` is ``-1`` for a
leaf and ``-2`` for a free slot; ``left``/``right``/``parent`` hold slot ids and
``free``/``n_free`` form a stack of unused slots. Every row of the training
(test) data is mapped to its leaf slot in ``node_of`` (``node_of_test``).

The sweep consumes pre-drawn randomness (four uniforms per tree and one
standard normal per leaf), so the compiled and the interpreted versions of this
module follow the same path for the same inputs. The row-level primitives
below come in a numba and a numpy flavour; the orchestration code is shared.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, jit
from ._kernels import _route_nb, _route_np

GROW, PRUNE, CHANGE, SWAP, STAY = 0, 1, 2, 3, 4
LEAF, FREE = -1, -2
REV = np.array([PRUNE, GROW, CHANGE, SWAP, STAY], dtype=np.int64)
BIG = np.iinfo(np.int64).max


@jit
def _node_stats_nb(node_of, r, cap, counts, sums):
    counts[:] = 0
    sums[:] = 0.0
    for i in range(node_of.shape[0]):
        counts[node_of[i]] += 1
        sums[node_of[i]] += r[i]


def _node_stats_np(node_of, r, cap, counts, sums):
    counts[:] = np.bincount(node_of, minlength=cap)
    sums[:] = np.bincount(node_of, weights=r, minlength=cap)


@jit
def _node_minmax_nb(X, nodes, cap, mn, mx):
    d = X.shape[1]
    mn[:, :] = BIG
    mx[:, :] = -1
    for i in range(X.shape[0]):
        s = nodes[i]
        for f in range(d):
            v = X[i, f]
            if v < mn[s, f]:
                mn[s, f] = v
            if v > mx[s, f]:
                mx[s, f] = v


def _node_minmax_np(X, nodes, cap, mn, mx):
    mn[:, :] = BIG
    mx[:, :] = -1
    np.minimum.at(mn, nodes, X)
    np.maximum.at(mx, nodes, X)


@jit
def _leaf_ranges_nb(X, order, nodes, n_leaf, mn, mx):
    """Per-leaf code range of every feature.

    Scans the rows in sorted order of each feature and stops once every leaf
    has been seen, which is much cheaper than a full pass when leaves are
    large.
    """
    n, d = X.shape
    mn[:, :] = BIG
    mx[:, :] = -1
    for f in range(d):
        found = 0
        for k in range(n):
            i = order[f, k]
            s = nodes[i]
            if mn[s, f] == BIG:
                mn[s, f] = X[i, f]
                found += 1
                if found == n_leaf:
                    break
        found = 0
        for k in range(n - 1, -1, -1):
            i = order[f, k]
            s = nodes[i]
            if mx[s, f] < 0:
                mx[s, f] = X[i, f]
                found += 1
                if found == n_leaf:
                    break


def _leaf_ranges_np(X, order, nodes, n_leaf, mn, mx):
    _node_minmax_np(X, nodes, mn.shape[0], mn, mx)


@jit
def _descend(X, i, feat, thr, left, right, s):
    while feat[s] >= 0:
        if X[i, feat[s]] <= thr[s]:
            s = left[s]
        else:
            s = right[s]
    return s


@jit
def _split_bounds_nb(X, order, node_of, in_cell, feat, thr, left, right, v, n_left, n_right, seen, lo_t, hi_t):
    """Feasible threshold interval ``[lo_t, hi_t]`` per feature for a new rule at ``v``.

    The lower end is the smallest code at which every left leaf has received
    a row of ``v``'s cell (rows taken in increasing code order); the upper end
    mirrors this for the right leaves. False if some leaf is unreachable.
    """
    n, d = X.shape
    for f in range(d):
        seen[:] = False
        found = 0
        for k in range(n):
            i = order[f, k]
            if not in_cell[node_of[i]]:
                continue
            s = _descend(X, i, feat, thr, left, right, left[v])
            if not seen[s]:
                seen[s] = True
                found += 1
                if found == n_left:
                    lo_t[f] = X[i, f]
                    break
        if found < n_left:
            return False
        seen[:] = False
        found = 0
        for k in range(n - 1, -1, -1):
            i = order[f, k]
            if not in_cell[node_of[i]]:
                continue
            s = _descend(X, i, feat, thr, left, right, right[v])
            if not seen[s]:
                seen[s] = True
                found += 1
                if found == n_right:
                    hi_t[f] = X[i, f] - 1
                    break
        if found < n_right:
            return False
    return True


def _split_bounds_np(X, order, node_of, in_cell, feat, thr, left, right, v, n_left, n_right, seen, lo_t, hi_t):
    cap = feat.shape[0]
    idx = np.nonzero(in_cell[node_of])[0]
    Xs = X[idx]
    ident = np.arange(cap)
    reach = np.empty(idx.shape[0], dtype=np.int64)
    mn = np.full((cap, X.shape[1]), BIG, dtype=np.int64)
    mx = np.full((cap, X.shape[1]), -1, dtype=np.int64)
    _route_np(Xs, feat, thr, left, right, ident, reach, left[v])
    np.minimum.at(mn, reach, Xs)
    _route_np(Xs, feat, thr, left, right, ident, reach, right[v])
    np.maximum.at(mx, reach, Xs)
    sub = np.zeros(cap, dtype=np.bool_)
    for side, start in ((0, left[v]), (1, right[v])):
        _subtree_mask(feat, left, right, start, sub)
        leaves = np.nonzero(sub & (feat == LEAF))[0]
        if side == 0:
            if np.any(mn[leaves, 0] == BIG):
                return False
            lo_t[:] = mn[leaves].max(axis=0)
        else:
            if np.any(mx[leaves, 0] < 0):
                return False
            hi_t[:] = mx[leaves].min(axis=0) - 1
    return True


@jit
def _covers_nb(X, node_of, in_cell, feat, thr, left, right, start, need, seen):
    """Whether rows of the flagged cells, routed from ``start``, reach ``need`` leaves."""
    seen[:] = False
    found = 0
    for i in range(X.shape[0]):
        if not in_cell[node_of[i]]:
            continue
        s = _descend(X, i, feat, thr, left, right, start)
        if not seen[s]:
            seen[s] = True
            found += 1
            if found == need:
                return True
    return False


def _covers_np(X, node_of, in_cell, feat, thr, left, right, start, need, seen):
    idx = np.nonzero(in_cell[node_of])[0]
    reach = np.empty(idx.shape[0], dtype=np.int64)
    _route_np(X[idx], feat, thr, left, right, np.arange(feat.shape[0]), reach, start)
    return np.unique(reach).shape[0] == need


@jit
def _residual_nb(y, fit, muj, nodes, r):
    for i in range(y.shape[0]):
        r[i] = y[i] - fit[i] + muj[nodes[i]]


def _residual_np(y, fit, muj, nodes, r):
    r[:] = y - fit + muj[nodes]


@jit
def _refit_nb(y, r, muj, nodes, fit):
    for i in range(y.shape[0]):
        fit[i] = y[i] - r[i] + muj[nodes[i]]


def _refit_np(y, r, muj, nodes, fit):
    fit[:] = y - r + muj[nodes]


@jit
def _shift_nb(out, muj, nodes, sign):
    for i in range(out.shape[0]):
        out[i] += sign * muj[nodes[i]]


def _shift_np(out, muj, nodes, sign):
    if sign > 0:
        out += muj[nodes]
    else:
        out -= muj[nodes]


@jit
def _reroute_nb(X, nodes, under, feat, thr, left, right, v, out):
    """Re-descend from ``v`` only the rows whose current leaf sits below ``v``."""
    for i in range(X.shape[0]):
        s = nodes[i]
        if under[s]:
            out[i] = _descend(X, i, feat, thr, left, right, v)
        else:
            out[i] = s


def _reroute_np(X, nodes, under, feat, thr, left, right, v, out):
    out[:] = nodes
    idx = np.nonzero(under[nodes])[0]
    sub = np.empty(idx.shape[0], dtype=np.int64)
    _route_np(X[idx], feat, thr, left, right, np.arange(feat.shape[0]), sub, v)
    out[idx] = sub


if USE_NUMBA:
    _walk, _node_stats, _leaf_ranges = _route_nb, _node_stats_nb, _leaf_ranges_nb
    _split_bounds, _covers = _split_bounds_nb, _covers_nb
    _residual, _refit, _shift = _residual_nb, _refit_nb, _shift_nb
    _reroute = _reroute_nb
else:
    _walk, _node_stats, _leaf_ranges = _route_np, _node_stats_np, _leaf_ranges_np
    _split_bounds, _covers = _split_bounds_np, _covers_np
    _residual, _refit, _shift = _residual_np, _refit_np, _shift_np
    _reroute = _reroute_np


# ---------------------------------------------------------------------------
# structural helpers (scalar loops over a handful of nodes)


@jit
def _below(parent, v, under):
    """Flag the slots whose parent chain passes through ``v`` (``v`` included)."""
    for s in range(parent.shape[0]):
        c = s
        while c >= 0 and c != v:
            c = parent[c]
        under[s] = c == v


@jit
def _subtree_mask(feat, left, right, v, mask):
    """Mark the slots of the subtree rooted at ``v``."""
    mask[:] = False
    stack = np.empty(feat.shape[0], dtype=np.int64)
    top = 0
    stack[0] = v
    top = 1
    while top > 0:
        top -= 1
        s = stack[top]
        mask[s] = True
        if feat[s] >= 0:
            stack[top] = left[s]
            stack[top + 1] = right[s]
            top += 2


@jit
def _cell_bounds(feat, thr, left, parent, s, n_bins, lo, hi):
    for f in range(n_bins.shape[0]):
        lo[f] = 0
        hi[f] = n_bins[f] - 1
    c = s
    p = parent[s]
    while p >= 0:
        f = feat[p]
        if left[p] == c:
            if thr[p] < hi[f]:
                hi[f] = thr[p]
        else:
            if thr[p] + 1 > lo[f]:
                lo[f] = thr[p] + 1
        c = p
        p = parent[p]


@jit
def _tree_log_prior(feat, thr, left, parent, depth, n_bins, alpha, beta, w, use_dir, lo, hi):
    total = 0.0
    for s in range(feat.shape[0]):
        if feat[s] == FREE:
            continue
        _cell_bounds(feat, thr, left, parent, s, n_bins, lo, hi)
        n_rules = 0
        wsum = 0.0
        for f in range(n_bins.shape[0]):
            width = hi[f] - lo[f]
            n_rules += width
            if width > 0:
                wsum += w[f]
        ps = alpha * (1.0 + depth[s]) ** (-beta)
        if feat[s] == LEAF:
            if n_rules > 0:
                total += math.log1p(-ps)
            continue
        f = feat[s]
        t = thr[s]
        if t < lo[f] or t >= hi[f]:
            return -np.inf
        total += math.log(ps)
        if use_dir:
            total += math.log(w[f]) - math.log(wsum) - math.log(hi[f] - lo[f])
        else:
            total -= math.log(n_rules)
    return total


@jit
def _leaf_loglik(feat, counts, sums, sigma2, sigma_mu2):
    """Leaf-dependent part of the conditional tree evidence."""
    ratio = sigma2 / sigma_mu2
    total = 0.0
    for s in range(feat.shape[0]):
        if feat[s] != LEAF:
            continue
        c = counts[s]
        total += -0.5 * math.log1p(c * sigma_mu2 / sigma2) + 0.5 * sums[s] ** 2 / (sigma2 * (c + ratio))
    return total


@jit
def _n_prunable(feat, left, right):
    k = 0
    for s in range(feat.shape[0]):
        if feat[s] >= 0 and feat[left[s]] == LEAF and feat[right[s]] == LEAF:
            k += 1
    return k


@jit
def _n_leaves(feat):
    k = 0
    for s in range(feat.shape[0]):
        if feat[s] == LEAF:
            k += 1
    return k


@jit
def _grow_count(feat, mn, mx):
    k = 0
    for s in range(feat.shape[0]):
        if feat[s] != LEAF:
            continue
        for f in range(mn.shape[1]):
            if mx[s, f] > mn[s, f]:
                k += mx[s, f] - mn[s, f]
    return k


@jit
def _n_leaves_under(feat, left, right, v, mask):
    _subtree_mask(feat, left, right, v, mask)
    k = 0
    for s in range(feat.shape[0]):
        if mask[s] and feat[s] == LEAF:
            k += 1
    return k


@jit
def _change_table(X, order, node_of, feat, thr, left, right, lo_all, hi_all, mask, cell, seen):
    """Fill per-node threshold intervals and return the number of change moves."""
    cap = feat.shape[0]
    d = X.shape[1]
    lo_t = np.empty(d, dtype=np.int64)
    hi_t = np.empty(d, dtype=np.int64)
    total = 0
    for v in range(cap):
        for f in range(d):
            lo_all[v, f] = 0
            hi_all[v, f] = -1
        if feat[v] < 0:
            continue
        n_left = _n_leaves_under(feat, left, right, left[v], mask)
        n_right = _n_leaves_under(feat, left, right, right[v], mask)
        _subtree_mask(feat, left, right, v, cell)
        if not _split_bounds(X, order, node_of, cell, feat, thr, left, right, v, n_left, n_right, seen, lo_t, hi_t):
            continue
        for f in range(d):
            lo_all[v, f] = lo_t[f]
            hi_all[v, f] = hi_t[f]
            if hi_t[f] >= lo_t[f]:
                total += hi_t[f] - lo_t[f] + 1
                if f == feat[v] and lo_t[f] <= thr[v] <= hi_t[f]:
                    total -= 1
    return total


@jit
def _apply_swap(feat, thr, left, right, p, c, saved):
    """Swap rules at ``p``; ``c = -1`` selects the both-children variant."""
    lc = left[p]
    rc = right[p]
    saved[0] = feat[p]
    saved[1] = thr[p]
    saved[2] = feat[lc]
    saved[3] = thr[lc]
    saved[4] = feat[rc]
    saved[5] = thr[rc]
    if c < 0:
        feat[p] = saved[2]
        thr[p] = saved[3]
        feat[lc] = saved[0]
        thr[lc] = saved[1]
        feat[rc] = saved[0]
        thr[rc] = saved[1]
    else:
        f = feat[c]
        t = thr[c]
        feat[c] = feat[p]
        thr[c] = thr[p]
        feat[p] = f
        thr[p] = t


@jit
def _undo_swap(feat, thr, left, right, p, saved):
    lc = left[p]
    rc = right[p]
    feat[p] = saved[0]
    thr[p] = saved[1]
    feat[lc] = saved[2]
    thr[lc] = saved[3]
    feat[rc] = saved[4]
    thr[rc] = saved[5]


@jit
def _swap_candidates(X, node_of, feat, thr, left, right, cand_p, cand_c, mask, seen):
    """Feasible swaps as ``(parent, child)`` pairs (child ``-1``: both children)."""
    cap = feat.shape[0]
    saved = np.empty(6, dtype=np.int64)
    k = 0
    for p in range(cap):
        if feat[p] < 0:
            continue
        lc = left[p]
        rc = right[p]
        n_try = 0
        tries = np.empty(2, dtype=np.int64)
        if feat[lc] >= 0 and feat[rc] >= 0 and feat[lc] == feat[rc] and thr[lc] == thr[rc]:
            tries[0] = -1
            n_try = 1
        else:
            if feat[lc] >= 0:
                tries[n_try] = lc
                n_try += 1
            if feat[rc] >= 0:
                tries[n_try] = rc
                n_try += 1
        for a in range(n_try):
            c = tries[a]
            _apply_swap(feat, thr, left, right, p, c, saved)
            need = _n_leaves_under(feat, left, right, p, mask)
            ok = _covers(X, node_of, mask, feat, thr, left, right, p, need, seen)
            _undo_swap(feat, thr, left, right, p, saved)
            if ok:
                cand_p[k] = p
                cand_c[k] = c
                k += 1
    return k


@jit
def _pick_grow(feat, mn, mx, idx, out):
    for s in range(feat.shape[0]):
        if feat[s] != LEAF:
            continue
        for f in range(mn.shape[1]):
            width = mx[s, f] - mn[s, f]
            if width <= 0:
                continue
            if idx < width:
                out[0] = s
                out[1] = f
                out[2] = mn[s, f] + idx
                return
            idx -= width


@jit
def _pick_prune(feat, left, right, idx):
    for s in range(feat.shape[0]):
        if feat[s] >= 0 and feat[left[s]] == LEAF and feat[right[s]] == LEAF:
            if idx == 0:
                return s
            idx -= 1
    return -1


@jit
def _pick_change(feat, thr, lo_all, hi_all, idx, out):
    for v in range(feat.shape[0]):
        if feat[v] < 0:
            continue
        for f in range(lo_all.shape[1]):
            for t in range(lo_all[v, f], hi_all[v, f] + 1):
                if f == feat[v] and t == thr[v]:
                    continue
                if idx == 0:
                    out[0] = v
                    out[1] = f
                    out[2] = t
                    return
                idx -= 1


@jit
def sweep(
    X, order, y, X_test, n_bins,
    feat, thr, left, right, parent, depth, mu, free, n_free,
    node_of, node_of_test, fit, test_fit,
    move_probs, sigma2, sigma_mu, inv_temp,
    alpha, beta, w, use_dir,
    u, z, accepted, kinds,
):
    """Update every tree once; returns the number of normals consumed.

    ``accepted[j]`` receives 1 when tree ``j`` changed and ``kinds[j]`` the
    drawn move kind (``STAY`` for the stay move or an empty feasible set).
    """
    m, cap = feat.shape
    n = X.shape[0]
    d = X.shape[1]
    sigma_mu2 = sigma_mu * sigma_mu
    ident = np.arange(cap)
    counts = np.zeros(cap, dtype=np.int64)
    sums = np.zeros(cap)
    counts2 = np.zeros(cap, dtype=np.int64)
    sums2 = np.zeros(cap)
    mn = np.zeros((cap, d), dtype=np.int64)
    mx = np.zeros((cap, d), dtype=np.int64)
    lo_all = np.zeros((cap, d), dtype=np.int64)
    hi_all = np.zeros((cap, d), dtype=np.int64)
    mask = np.zeros(cap, dtype=np.bool_)
    cell = np.zeros(cap, dtype=np.bool_)
    cand_p = np.zeros(2 * cap, dtype=np.int64)
    cand_c = np.zeros(2 * cap, dtype=np.int64)
    lo = np.zeros(d, dtype=np.int64)
    hi = np.zeros(d, dtype=np.int64)
    saved = np.zeros(6, dtype=np.int64)
    pick = np.zeros(3, dtype=np.int64)
    seen = np.zeros(cap, dtype=np.bool_)
    under = np.zeros(cap, dtype=np.bool_)
    new_nodes = np.zeros(n, dtype=np.int64)
    r = np.empty(n)
    cum = np.cumsum(move_probs)
    zi = 0

    for j in range(m):
        fj, tj, lj, rj = feat[j], thr[j], left[j], right[j]
        pj, dj = parent[j], depth[j]
        nodes = node_of[j]
        _residual(y, fit, mu[j], nodes, r)
        _shift(test_fit, mu[j], node_of_test[j], -1.0)
        _node_stats(nodes, r, cap, counts, sums)
        accepted[j] = 0

        kind = STAY
        for k in range(5):
            if u[4 * j] < cum[k]:
                kind = k
                break

        n_fwd = 0
        if kind == GROW:
            _leaf_ranges(X, order, nodes, _n_leaves(fj), mn, mx)
            n_fwd = _grow_count(fj, mn, mx)
        elif kind == PRUNE:
            n_fwd = _n_prunable(fj, lj, rj)
        elif kind == CHANGE:
            n_fwd = _change_table(X, order, nodes, fj, tj, lj, rj, lo_all, hi_all, mask, cell, seen)
        elif kind == SWAP:
            n_fwd = _swap_candidates(X, nodes, fj, tj, lj, rj, cand_p, cand_c, mask, seen)
        if n_fwd == 0:
            kind = STAY
        kinds[j] = kind

        if kind != STAY:
            sel = min(int(u[4 * j + 1] * n_fwd), n_fwd - 1)
            old_prior = _tree_log_prior(fj, tj, lj, pj, dj, n_bins, alpha, beta, w, use_dir, lo, hi)
            old_ll = _leaf_loglik(fj, counts, sums, sigma2, sigma_mu2)
            target = -1
            a = -1
            b = -1
            old_f = 0
            old_t = 0
            if kind == GROW:
                _pick_grow(fj, mn, mx, sel, pick)
                target = pick[0]
                a = free[j, n_free[j] - 1]
                b = free[j, n_free[j] - 2]
                n_free[j] -= 2
                fj[target] = pick[1]
                tj[target] = pick[2]
                lj[target] = a
                rj[target] = b
                for s in (a, b):
                    fj[s] = LEAF
                    pj[s] = target
                    dj[s] = dj[target] + 1
                    mu[j, s] = 0.0
            elif kind == PRUNE:
                target = _pick_prune(fj, lj, rj, sel)
                a = lj[target]
                b = rj[target]
                old_f = fj[target]
                old_t = tj[target]
                fj[target] = LEAF
                fj[a] = FREE
                fj[b] = FREE
                free[j, n_free[j]] = b
                free[j, n_free[j] + 1] = a
                n_free[j] += 2
            elif kind == CHANGE:
                _pick_change(fj, tj, lo_all, hi_all, sel, pick)
                target = pick[0]
                old_f = fj[target]
                old_t = tj[target]
                fj[target] = pick[1]
                tj[target] = pick[2]
            else:
                target = cand_p[sel]
                a = cand_c[sel]
                _apply_swap(fj, tj, lj, rj, target, a, saved)

            _below(pj, target, under)
            _reroute(X, nodes, under, fj, tj, lj, rj, target, new_nodes)
            _node_stats(new_nodes, r, cap, counts2, sums2)
            valid = True
            for s in range(cap):
                if fj[s] == LEAF and counts2[s] == 0:
                    valid = False
                    break

            n_rev = 0
            rev_ok = True
            if valid:
                if kind == GROW:
                    n_rev = _n_prunable(fj, lj, rj)
                elif kind == PRUNE:
                    _leaf_ranges(X, order, new_nodes, _n_leaves(fj), mn, mx)
                    n_rev = _grow_count(fj, mn, mx)
                elif kind == CHANGE:
                    n_rev = _change_table(X, order, new_nodes, fj, tj, lj, rj, lo_all, hi_all, mask, cell, seen)
                else:
                    n_rev = _swap_candidates(X, new_nodes, fj, tj, lj, rj, cand_p, cand_c, mask, seen)
                    rev_ok = False
                    for q in range(n_rev):
                        if cand_p[q] == target and cand_c[q] == a:
                            rev_ok = True
                            break
            if valid and n_rev > 0 and rev_ok:
                new_prior = _tree_log_prior(fj, tj, lj, pj, dj, n_bins, alpha, beta, w, use_dir, lo, hi)
                new_ll = _leaf_loglik(fj, counts2, sums2, sigma2, sigma_mu2)
                log_ratio = (
                    inv_temp * (new_ll - old_ll)
                    + new_prior - old_prior
                    + math.log(move_probs[REV[kind]] / n_rev)
                    - math.log(move_probs[kind] / n_fwd)
                )
                if math.log(u[4 * j + 2]) < log_ratio:
                    accepted[j] = 1

            if accepted[j] == 1:
                nodes[:] = new_nodes
                counts[:] = counts2
                sums[:] = sums2
            else:
                if kind == GROW:
                    fj[target] = LEAF
                    fj[a] = FREE
                    fj[b] = FREE
                    n_free[j] += 2
                elif kind == PRUNE:
                    n_free[j] -= 2
                    fj[target] = old_f
                    tj[target] = old_t
                    fj[a] = LEAF
                    fj[b] = LEAF
                elif kind == CHANGE:
                    fj[target] = old_f
                    tj[target] = old_t
                else:
                    _undo_swap(fj, tj, lj, rj, target, saved)

        # conditional redraw of the leaf values and refresh of the fits
        for s in range(cap):
            if fj[s] != LEAF:
                continue
            var = 1.0 / (counts[s] / sigma2 + 1.0 / sigma_mu2)
            mu[j, s] = var * sums[s] / sigma2 + math.sqrt(var) * z[zi]
            zi += 1
        if accepted[j] == 1 and X_test.shape[0] > 0:
            _walk(X_test, fj, tj, lj, rj, ident, node_of_test[j], 0)
        _refit(y, r, mu[j], nodes, fit)
        _shift(test_fit, mu[j], node_of_test[j], 1.0)
    return zi

