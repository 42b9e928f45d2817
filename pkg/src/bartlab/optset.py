"""Exact function-space analysis over small enumerated ensemble spaces.

All integrals are taken over the full covariate grid. ``nu`` is a weight vector
over ``grid_points(space)``; it defaults to the uniform measure.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .covariates import CovariateSpace, grid_points
from .errors import CapacityError, ConfigError, InfeasibleError
from .samplers import MarginalizedKernel, SamplerConfig, init_state, step_default
from .trees import Tree, leaf_assignment

__all__ = [
    "EnumeratedSpace",
    "PemTable",
    "HittingTimes",
    "enumerate_trees",
    "enumerate_tse_space",
    "pem_basis",
    "df",
    "bias2",
    "pem_table",
    "dim_m",
    "opt_set",
    "partition_key",
    "measure_hitting_time",
    "write_space_csv",
]

RANK_TOL = 1e-9
ZERO_BIAS_TOL = 1e-10


def _trees_exact(n_bins: tuple, lo: tuple, hi: tuple, k: int, cache: dict):
    """Labeled tree roots with exactly ``k`` internal nodes inside the cell [lo, hi]."""
    key = (lo, hi, k)
    hit = cache.get(key)
    if hit is not None:
        return hit
    if k == 0:
        out = [()]
    else:
        out = []
        for f in range(len(n_bins)):
            for t in range(lo[f], hi[f]):
                lhi = hi[:f] + (t,) + hi[f + 1 :]
                rlo = lo[:f] + (t + 1,) + lo[f + 1 :]
                for kl in range(k):
                    lefts = _trees_exact(n_bins, lo, lhi, kl, cache)
                    if not lefts:
                        continue
                    rights = _trees_exact(n_bins, rlo, hi, k - 1 - kl, cache)
                    out.extend((f, t, a, b) for a in lefts for b in rights)
    cache[key] = out
    return out


def enumerate_trees(space: CovariateSpace, max_internal: int, data=None) -> list:
    """Every labeled tree with at most ``max_internal`` splits whose rules lie
    strictly inside their cells.

    With ``data`` only trees whose leaves are all non-empty on ``data.X`` are
    kept. Order: by number of splits, then by serialization.
    """
    if max_internal < 0:
        raise ConfigError("max_internal must be non-negative")
    n_bins = tuple(int(b) for b in space.n_bins)
    lo = (0,) * len(n_bins)
    hi = tuple(b - 1 for b in n_bins)
    cache = {}
    trees = []
    for k in range(max_internal + 1):
        level = [Tree(r) for r in _trees_exact(n_bins, lo, hi, k, cache)]
        if data is not None:
            level = [t for t in level if _nonempty(t, data.X)]
        trees.extend(sorted(level, key=lambda t: t.serialize()))
    return trees


def _nonempty(tree, X):
    leaf = leaf_assignment(tree, X)
    return np.bincount(leaf, minlength=tree.n_leaves).min() > 0


@dataclass
class EnumeratedSpace:
    """All ordered ``m``-tuples of the enumerated trees."""

    space: CovariateSpace
    m: int
    max_internal: int
    trees: tuple
    tses: tuple
    index: dict = field(repr=False)
    rule_selection: str = "pairs"

    def __len__(self):
        return len(self.tses)

    def find(self, tse) -> int:
        return self.index[tuple(tse)]


def enumerate_tse_space(
    space: CovariateSpace,
    m: int,
    max_internal: int,
    data=None,
    cap: int = 10**6,
    rule_selection: str = "pairs",
) -> EnumeratedSpace:
    if m < 1:
        raise ConfigError("m must be at least 1")
    trees = tuple(enumerate_trees(space, max_internal, data))
    count = len(trees) ** m
    if count > cap:
        raise CapacityError(f"{count} ensembles exceed the enumeration cap of {cap}", count)
    tses = tuple(itertools.product(trees, repeat=m))
    index = {t: i for i, t in enumerate(tses)}
    return EnumeratedSpace(space, m, max_internal, trees, tses, index, rule_selection)


# ---------------------------------------------------------------------------
# partition ensemble models


@lru_cache(maxsize=8)
def _grid(space: CovariateSpace) -> np.ndarray:
    return grid_points(space)


def _measure(space, nu):
    N = space.size
    if nu is None:
        return np.full(N, 1.0 / N)
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (N,) or np.any(nu <= 0):
        raise ConfigError("nu must be a positive weight per grid point")
    return nu / nu.sum()


def pem_basis(ensemble: Sequence[Tree], space: CovariateSpace) -> np.ndarray:
    """Leaf indicators of every tree evaluated on the grid (``|grid| x b``)."""
    G = _grid(space)
    cols = []
    for t in ensemble:
        leaf = leaf_assignment(t, G)
        cols.append(np.eye(t.n_leaves)[leaf])
    return np.hstack(cols)


def _rank(A) -> int:
    s = np.linalg.svd(A, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def df(ensemble: Sequence[Tree], space: CovariateSpace, nu=None) -> int:
    """Dimension of the span of all leaf indicators."""
    w = np.sqrt(_measure(space, nu))
    return _rank(w[:, None] * pem_basis(ensemble, space))


def bias2(ensemble: Sequence[Tree], f_star, space: CovariateSpace, nu=None) -> float:
    """Squared ``L2(nu)`` distance from ``f_star`` to the ensemble's span."""
    nu = _measure(space, nu)
    f = np.asarray(f_star, dtype=float)
    w = np.sqrt(nu)
    A = w[:, None] * pem_basis(ensemble, space)
    coef, *_ = np.linalg.lstsq(A, w * f, rcond=None)
    resid = w * f - A @ coef
    return float(resid @ resid)


@dataclass(frozen=True)
class PemTable:
    """Per-ensemble ``df`` and squared bias over an enumerated space."""

    df: np.ndarray
    bias2: np.ndarray
    zero_bias: np.ndarray

    def dim(self) -> int:
        if not self.zero_bias.any():
            raise InfeasibleError("no zero-bias ensemble in the enumerated space")
        return int(self.df[self.zero_bias].min())

    def opt(self, k: int) -> frozenset:
        if k < 0:
            raise ConfigError("k must be non-negative")
        cut = self.dim() + k
        return frozenset(np.flatnonzero(self.zero_bias & (self.df <= cut)).tolist())


def _zero_tol(f, nu):
    return ZERO_BIAS_TOL * max(float(nu @ f**2), np.finfo(float).tiny)


def pem_table(f_star, enum: EnumeratedSpace, nu=None) -> PemTable:
    space = enum.space
    nu = _measure(space, nu)
    f = np.asarray(f_star, dtype=float)
    tol = _zero_tol(f, nu)
    d = np.empty(len(enum), dtype=np.int64)
    b = np.empty(len(enum))
    memo = {}
    for i, tse in enumerate(enum.tses):
        key = frozenset(tse)  # span depends only on the set of trees
        hit = memo.get(key)
        if hit is None:
            hit = (df(tse, space, nu), bias2(tse, f, space, nu))
            memo[key] = hit
        d[i], b[i] = hit
    return PemTable(d, b, b < tol)


def dim_m(f_star, m: int, enum: EnumeratedSpace, nu=None) -> int:
    """Smallest ``df`` among ``m``-tree ensembles whose span contains ``f_star``."""
    if enum.m != m:
        raise ConfigError(f"space enumerates {enum.m}-tree ensembles, asked for m={m}")
    return pem_table(f_star, enum, nu).dim()


def opt_set(f_star, k: int, enum: EnumeratedSpace, nu=None, table: Optional[PemTable] = None) -> frozenset:
    """Indices of zero-bias ensembles with ``df <= dim + k``."""
    if table is None:
        table = pem_table(f_star, enum, nu)
    return table.opt(k)


def write_space_csv(path, enum: EnumeratedSpace, table: PemTable, ks=(0,), config_hash: str = ""):
    opts = {k: table.opt(k) for k in ks}
    cols = ["tse_index"] + [f"tree{j}" for j in range(enum.m)] + ["df", "bias2"]
    cols += [f"in_opt_{k}" for k in ks] + ["config_hash"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i, tse in enumerate(enum.tses):
            row = [i] + [t.serialize() for t in tse] + [int(table.df[i]), repr(float(table.bias2[i]))]
            row += [int(i in opts[k]) for k in ks] + [config_hash]
            w.writerow(row)


# ---------------------------------------------------------------------------
# empirical hitting times


def partition_key(tree: Tree, space: CovariateSpace) -> tuple:
    """Canonical labeling of the grid partition a tree induces."""
    leaf = leaf_assignment(tree, _grid(space))
    _, first = np.unique(leaf, return_index=True)
    relabel = np.argsort(np.argsort(first))
    return tuple(relabel[leaf].tolist())


@dataclass(frozen=True)
class HittingTimes:
    tau: np.ndarray
    censored: np.ndarray

    @property
    def n_reps(self) -> int:
        return self.tau.shape[0]

    def mean(self) -> float:
        return float(self.tau.mean())

    def stderr(self) -> float:
        return float(self.tau.std(ddof=1) / np.sqrt(self.tau.size)) if self.tau.size > 1 else float("nan")

    def median(self) -> float:
        return float(np.median(self.tau))


def _matcher(target, matcher, space):
    target = {tuple(t) for t in target}
    if not target:
        raise ConfigError("hitting target must be non-empty")
    if matcher == "structure":
        return lambda tse: tse in target
    if matcher == "partition":
        if space is None:
            raise ConfigError("partition matching needs a covariate space")
        keys = {tuple(partition_key(t, space) for t in tse) for tse in target}
        memo = {}

        def hit(tse):
            res = memo.get(tse)
            if res is None:
                res = memo[tse] = tuple(partition_key(t, space) for t in tse) in keys
            return res

        return hit
    raise ConfigError(f"unknown matcher {matcher!r}")


def measure_hitting_time(
    config: SamplerConfig,
    data,
    target,
    cap: int,
    n_reps: int,
    base_seed: int = 0,
    matcher: str = "structure",
    space=None,
) -> HittingTimes:
    """Iterations until the chain's tree structures first enter ``target``.

    ``target`` is a collection of tree tuples. Every replicate starts from
    trivial trees and uses seed ``base_seed + rep``; replicates that do not hit
    within ``cap`` iterations are recorded as ``cap`` and flagged censored.
    ``space`` is the enumerated space required by the multistep variant.
    """
    if cap < 0 or n_reps < 1:
        raise ConfigError("need cap >= 0 and n_reps >= 1")
    hit = _matcher(target, matcher, data.space if data.binned else None)
    tau = np.zeros(n_reps, dtype=np.int64)
    cens = np.zeros(n_reps, dtype=bool)
    kernel = None if config.variant == "default" else MarginalizedKernel(config, data, space)
    for rep in range(n_reps):
        rng = np.random.default_rng(base_seed + rep)
        if kernel is None:
            tau[rep], cens[rep] = _hit_default(config.with_seed(base_seed + rep), data, hit, cap, rng)
            continue
        trees = tuple(Tree() for _ in range(config.m))
        sigma2 = _fixed_sigma2(config)
        t = 0
        while not hit(trees) and t < cap:
            T = config.temperature.at(t, cap)
            trees, _, _ = kernel.step(trees, sigma2, rng, T)
            t += 1
        tau[rep], cens[rep] = t, not hit(trees)
    return HittingTimes(tau, cens)


def _fixed_sigma2(config):
    if config.priors.sigma2 is None:
        raise ConfigError("hitting times on the marginalized sampler need a fixed sigma2")
    return config.priors.sigma2


def _hit_default(config, data, hit, cap, rng):
    state = init_state(config, data)
    t = 0
    while not hit(tuple(state.trees)) and t < cap:
        state, _, _ = step_default(state, data, config, rng, config.temperature.at(t, cap))
        state.sync()
        t += 1
    return t, not hit(tuple(state.trees))
