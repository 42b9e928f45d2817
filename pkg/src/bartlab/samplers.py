"""MCMC kernels, chain drivers, schedules, initializations and traces."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _sweep
from ._kernels import route
from .errors import ConfigError
from .model import (
    Priors,
    calibrate_sigma2_scale,
    draw_sigma2,
    ensemble_predict,
    log_marginal_likelihood,
    log_tree_prior,
    sample_leaf_params_marginalized,
    sample_split_weights,
)
from .trees import KINDS, LEAF, MoveOracle, MoveWeights, Tree, leaf_assignment, propose, q_matrix

__all__ = [
    "Schedule",
    "SamplerConfig",
    "Forest",
    "ChainState",
    "ChainTrace",
    "MarginalizedKernel",
    "init_state",
    "step_default",
    "step_marginalized",
    "run_chain",
    "run_chains",
    "init_greedy_boost",
]

VARIANTS = ("default", "marginalized", "tempered", "multistep")
KIND_NAMES = KINDS + ("stay",)
REFRESH_EVERY = 100  # sweeps between exact recomputations of the running fit


@dataclass(frozen=True)
class Schedule:
    """Temperature per iteration: constant, or linear from ``t_max`` to ``t_min``
    over the whole run."""

    t_max: float = 1.0
    t_min: Optional[float] = None

    def __post_init__(self):
        if self.t_max < 1 or (self.t_min is not None and self.t_min < 1):
            raise ConfigError("temperatures must be >= 1")

    @classmethod
    def constant(cls, T: float) -> "Schedule":
        return cls(float(T))

    @classmethod
    def linear(cls, t_max: float, t_min: float) -> "Schedule":
        return cls(float(t_max), float(t_min))

    def at(self, it: int, iterations: int) -> float:
        if self.t_min is None or iterations <= 1:
            return self.t_max
        frac = it / (iterations - 1)
        return self.t_max + (self.t_min - self.t_max) * frac

    def label(self) -> str:
        if self.t_min is None:
            return f"{self.t_max:g}"
        return f"linear({self.t_max:g},{self.t_min:g})"


@dataclass(frozen=True)
class SamplerConfig:
    variant: str = "default"
    m: int = 200
    weights: MoveWeights = field(default_factory=MoveWeights)
    priors: Priors = field(default_factory=Priors)
    temperature: Schedule = field(default_factory=Schedule)
    r: int = 1
    lazy: bool = False
    iterations: int = 11_000
    burn_in: int = 1_000
    seed: int = 0
    keep_burnin: bool = False
    rule_selection: str = "pairs"
    max_internal: Optional[int] = None
    record_predictions: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown sampler variant {self.variant!r}")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if self.r < 1:
            raise ConfigError("r must be at least 1")
        if not self.iterations > self.burn_in >= 0:
            raise ConfigError("need iterations > burn_in >= 0")
        if isinstance(self.temperature, (int, float)):
            object.__setattr__(self, "temperature", Schedule.constant(self.temperature))
        if self.variant == "default" and (self.r != 1 or self.lazy):
            raise ConfigError("r and lazy apply to the marginalized family only")
        if self.variant == "default" and self.rule_selection != "pairs":
            raise ConfigError("the default sampler selects rules uniformly over pairs")

    def with_seed(self, seed: int) -> "SamplerConfig":
        return replace(self, seed=int(seed))


# ---------------------------------------------------------------------------
# array-pooled forest used by the default sampler


class Forest:
    """Pool arrays for ``m`` trees; see :mod:`bartlab._sweep` for the layout."""

    def __init__(self, m, cap, n, n_test):
        self.m = m
        shape = (m, cap)
        self.feat = np.full(shape, _sweep.FREE, dtype=np.int64)
        self.thr = np.zeros(shape, dtype=np.int64)
        self.left = np.zeros(shape, dtype=np.int64)
        self.right = np.zeros(shape, dtype=np.int64)
        self.parent = np.full(shape, -1, dtype=np.int64)
        self.depth = np.zeros(shape, dtype=np.int64)
        self.mu = np.zeros(shape)
        self.free = np.zeros(shape, dtype=np.int64)
        self.n_free = np.zeros(m, dtype=np.int64)
        self.node_of = np.zeros((m, n), dtype=np.int64)
        self.node_of_test = np.zeros((m, n_test), dtype=np.int64)

    @property
    def cap(self) -> int:
        return self.feat.shape[1]

    @classmethod
    def from_trees(cls, trees, leaf_values, X, X_test):
        sizes = [2 * t.n_leaves - 1 for t in trees]
        cap = max(8, 2 * max(sizes) + 2)
        forest = cls(len(trees), cap, X.shape[0], X_test.shape[0])
        for j, (tree, mu) in enumerate(zip(trees, leaf_values)):
            forest._load(j, tree, np.asarray(mu, dtype=float))
        forest.reroute(X, X_test)
        forest.refresh()
        forest.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T).astype(np.int64)
        return forest

    def _load(self, j, tree, mu):
        slot = {}
        leaf_index = {p: i for i, p in enumerate(tree.leaves())}
        for k, (path, node, depth) in enumerate(tree.nodes()):
            slot[path] = k
            self.depth[j, k] = depth
            self.parent[j, k] = slot[path[:-1]] if path else -1
            if node:
                self.feat[j, k] = node[0]
                self.thr[j, k] = node[1]
            else:
                self.feat[j, k] = _sweep.LEAF
                self.mu[j, k] = mu[leaf_index[path]]
        for path, node, _ in tree.nodes():
            if node:
                self.left[j, slot[path]] = slot[path + (0,)]
                self.right[j, slot[path]] = slot[path + (1,)]
        used = len(slot)
        self.free[j, : self.cap - used] = np.arange(self.cap - 1, used - 1, -1)
        self.n_free[j] = self.cap - used

    def reroute(self, X, X_test):
        ident = np.arange(self.cap)
        for j in range(self.m):
            args = (self.feat[j], self.thr[j], self.left[j], self.right[j], ident)
            self.node_of[j] = route(X, *args)
            if X_test.shape[0]:
                self.node_of_test[j] = route(X_test, *args)

    def ensure_capacity(self, spare: int = 2):
        if self.n_free.min() >= spare:
            return
        old = self.cap
        new = 2 * old
        for name in ("feat", "thr", "left", "right", "parent", "depth", "mu"):
            arr = getattr(self, name)
            fill = _sweep.FREE if name == "feat" else (-1 if name == "parent" else 0)
            grown = np.full((self.m, new), fill, dtype=arr.dtype)
            grown[:, :old] = arr
            setattr(self, name, grown)
        free = np.zeros((self.m, new), dtype=np.int64)
        extra = np.arange(new - 1, old - 1, -1)
        for j in range(self.m):
            k = self.n_free[j]
            free[j, : new - old] = extra
            free[j, new - old : new - old + k] = self.free[j, :k]
        self.free = free
        self.n_free = self.n_free + (new - old)

    def refresh(self):
        """Recompute the running sums of tree outputs from scratch."""
        self.fit = np.take_along_axis(self.mu, self.node_of, axis=1).sum(axis=0)
        if self.node_of_test.shape[1] == 0:
            self.test_fit = np.zeros(0)
        else:
            self.test_fit = np.take_along_axis(self.mu, self.node_of_test, axis=1).sum(axis=0)

    def n_leaves(self) -> np.ndarray:
        return (self.feat == _sweep.LEAF).sum(axis=1)

    def split_counts(self, d: int) -> np.ndarray:
        f = self.feat[self.feat >= 0]
        return np.bincount(f, minlength=d)

    def tree(self, j) -> Tree:
        feat, thr, left, right = self.feat[j], self.thr[j], self.left[j], self.right[j]

        def rec(s):
            if feat[s] < 0:
                return LEAF
            return (int(feat[s]), int(thr[s]), rec(left[s]), rec(right[s]))

        return Tree(rec(0))

    def leaf_values(self, j) -> np.ndarray:
        """Leaf values of tree ``j`` in breadth-first leaf order."""
        out = []
        queue = [0]
        while queue:
            s = queue.pop(0)
            if self.feat[j, s] < 0:
                out.append(self.mu[j, s])
            else:
                queue += [self.left[j, s], self.right[j, s]]
        return np.array(out)

    def trees(self):
        return [self.tree(j) for j in range(self.m)]


# ---------------------------------------------------------------------------
# chain state and trace


@dataclass
class ChainState:
    trees: tuple
    leaf_values: list
    sigma2: float
    iteration: int = 0
    forest: Optional[Forest] = None
    split_weights: Optional[np.ndarray] = None
    lam_cal: Optional[float] = None

    def sync(self):
        """Refresh the tree tuple and leaf values from the array pool."""
        if self.forest is not None:
            self.trees = tuple(self.forest.trees())
            self.leaf_values = [self.forest.leaf_values(j) for j in range(self.forest.m)]


@dataclass
class ChainTrace:
    chain: int
    seed: int
    iteration: np.ndarray
    sigma2: np.ndarray
    accept: np.ndarray
    move_kind: np.ndarray
    leaf_count_total: np.ndarray
    test_pred: np.ndarray
    final_trees: tuple = ()

    def __len__(self):
        return self.iteration.shape[0]

    def test_rmse(self, target) -> np.ndarray:
        target = np.asarray(target, dtype=float)
        if self.test_pred.shape[1] == 0:
            return np.full(len(self), np.nan)
        return np.sqrt(np.mean((self.test_pred - target) ** 2, axis=1))

    def rows(self, target=None):
        rmse = self.test_rmse(target) if target is not None else np.full(len(self), np.nan)
        for k in range(len(self)):
            yield {
                "chain": self.chain,
                "iteration": int(self.iteration[k]),
                "sigma2": repr(float(self.sigma2[k])),
                "accept": int(self.accept[k]),
                "move_kind": KIND_NAMES[int(self.move_kind[k])],
                "test_rmse": repr(float(rmse[k])),
                "leaf_count_total": int(self.leaf_count_total[k]),
            }

    @classmethod
    def from_csv(cls, path, predictions_path=None) -> "ChainTrace":
        """Inverse of :meth:`to_csv` (final trees are not stored)."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ConfigError(f"{path}: empty trace")
        chain = int(rows[0]["chain"])
        preds = np.zeros((len(rows), 0))
        if predictions_path is not None:
            with open(predictions_path, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                head = next(reader)
                cols = [i for i, h in enumerate(head) if h.startswith("x")]
                preds = np.array([[float(r[i]) for i in cols] for r in reader]).reshape(len(rows), len(cols))
        return cls(
            chain=chain,
            seed=-1,
            iteration=np.array([int(r["iteration"]) for r in rows]),
            sigma2=np.array([float(r["sigma2"]) for r in rows]),
            accept=np.array([int(r["accept"]) for r in rows]),
            move_kind=np.array([KIND_NAMES.index(r["move_kind"]) for r in rows]),
            leaf_count_total=np.array([int(r["leaf_count_total"]) for r in rows]),
            test_pred=preds,
        )

    def to_csv(self, path, target=None, predictions_path=None, config_hash=None):
        cols = ["chain", "iteration", "sigma2", "accept", "move_kind", "test_rmse", "leaf_count_total"]
        extra = {} if config_hash is None else {"config_hash": config_hash}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols + list(extra))
            w.writeheader()
            for row in self.rows(target):
                w.writerow({**row, **extra})
        if predictions_path is not None:
            with open(predictions_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                head = ["chain", "iteration"] + [f"x{i}" for i in range(self.test_pred.shape[1])]
                w.writerow(head + list(extra))
                for k in range(len(self)):
                    vals = [repr(float(v)) for v in self.test_pred[k]]
                    w.writerow([self.chain, int(self.iteration[k])] + vals + list(extra.values()))


# ---------------------------------------------------------------------------
# initialization


def _leaf_means(tree, X, r):
    leaf = leaf_assignment(tree, X)
    counts = np.bincount(leaf, minlength=tree.n_leaves)
    return np.bincount(leaf, weights=r, minlength=tree.n_leaves) / np.maximum(counts, 1)


def _greedy_tree(X, r, n_bins, max_depth, order):
    """Best-first squared-error tree grown on the residual ``r``."""

    def grow(idx, depth):
        if depth >= max_depth or idx.size < 2:
            return LEAF
        Xs, rs = X[idx], r[idx]
        total, cnt = rs.sum(), idx.size
        base = total**2 / cnt
        best = (1e-12 * max(1.0, abs(base)), None)
        for f in order:
            k = int(n_bins[f])
            c = np.cumsum(np.bincount(Xs[:, f], minlength=k))[:-1]
            s = np.cumsum(np.bincount(Xs[:, f], weights=rs, minlength=k))[:-1]
            ok = (c > 0) & (c < cnt)
            if not ok.any():
                continue
            gain = np.where(ok, s**2 / np.maximum(c, 1) + (total - s) ** 2 / np.maximum(cnt - c, 1) - base, -np.inf)
            t = int(np.argmax(gain))
            if gain[t] > best[0]:
                best = (gain[t], (int(f), t))
        if best[1] is None:
            return LEAF
        f, t = best[1]
        go_left = X[idx, f] <= t
        return (f, t, grow(idx[go_left], depth + 1), grow(idx[~go_left], depth + 1))

    return Tree(grow(np.arange(X.shape[0]), 0))


def init_greedy_boost(data, m: int, max_depth: int, rng):
    """``m`` greedy least-squares trees fitted by boosting on the residual.

    Returns ``(trees, leaf_values)``; leaf values are unshrunk residual means.
    """
    if m < 1:
        raise ConfigError("m must be at least 1")
    if max_depth < 0:
        raise ConfigError("max_depth must be non-negative")
    X, y = data.X, data.y
    n_bins = data.space.n_bins
    r = y.astype(float).copy()
    trees, values = [], []
    for _ in range(m):
        order = rng.permutation(X.shape[1])
        tree = _greedy_tree(X, r, n_bins, max_depth, order)
        mu = _leaf_means(tree, X, r)
        r -= mu[leaf_assignment(tree, X)]
        trees.append(tree)
        values.append(mu)
    return tuple(trees), values


def init_state(config: SamplerConfig, data, init=None) -> ChainState:
    """Starting state: trivial trees with leaves ``mean(y)/m`` unless ``init``
    supplies ``(trees, leaf_values)``."""
    m = config.m
    if init is None:
        trees = tuple(Tree() for _ in range(m))
        values = [np.array([data.y.mean() / m]) for _ in range(m)]
    else:
        trees, values = tuple(init[0]), [np.asarray(v, dtype=float) for v in init[1]]
        if len(trees) != m:
            raise ConfigError(f"init has {len(trees)} trees, config expects {m}")
    pri = config.priors
    lam_cal = None
    if pri.sigma2 is not None:
        sigma2 = pri.sigma2
    else:
        lam_cal = calibrate_sigma2_scale(data.y, pri.nu, pri.q)
        sigma2 = float(np.var(data.y, ddof=1)) if data.n > 1 else 1.0
    w = None
    if pri.split_prior == "dirichlet":
        w = np.full(data.d, 1.0 / data.d)
    return ChainState(trees, values, sigma2, 0, None, w, lam_cal)


# ---------------------------------------------------------------------------
# default (backfitting) sampler


def step_default(state: ChainState, data, config: SamplerConfig, rng, T: float = 1.0, X_test=None):
    """One sweep over all trees followed by the noise-variance update.

    Returns ``(state, n_accepted, last_kind)``.
    """
    if config.variant != "default":
        raise ConfigError("step_default needs the default variant")
    if X_test is None:
        X_test = np.zeros((0, data.d), dtype=np.int32)
    if state.forest is None:
        state.forest = Forest.from_trees(state.trees, state.leaf_values, data.X, X_test)
    forest = state.forest
    forest.ensure_capacity()
    m = forest.m
    pri = config.priors
    sigma_mu = math.sqrt(state.sigma2 / pri.lam) if pri.lam is not None else pri.sigma_mu(m)
    use_dir = state.split_weights is not None
    w = state.split_weights if use_dir else np.ones(data.d)
    u = 1.0 - rng.random(4 * m)
    z = rng.standard_normal(int(forest.n_leaves().sum()) + m)
    if state.iteration % REFRESH_EVERY == 0:
        forest.refresh()
    accepted = np.zeros(m, dtype=np.int64)
    kinds = np.zeros(m, dtype=np.int64)
    _sweep.sweep(
        data.X, forest.order, data.y, X_test, np.asarray(data.space.n_bins, dtype=np.int64),
        forest.feat, forest.thr, forest.left, forest.right, forest.parent, forest.depth,
        forest.mu, forest.free, forest.n_free,
        forest.node_of, forest.node_of_test, forest.fit, forest.test_fit,
        np.array(config.weights.as_tuple()), float(state.sigma2), float(sigma_mu), 1.0 / T,
        float(pri.alpha), float(pri.beta), np.asarray(w, dtype=float), use_dir,
        u, z, accepted, kinds,
    )
    if pri.sigma2 is None:
        resid = data.y - forest.fit
        state.sigma2 = draw_sigma2(float(resid @ resid), data.n, pri.nu, state.lam_cal, rng)
    if use_dir:
        state.split_weights = sample_split_weights(forest.split_counts(data.d), pri.alpha_dir, rng)
    state.iteration += 1
    return state, int(accepted.sum()), int(kinds[-1])


# ---------------------------------------------------------------------------
# marginalized sampler family


class MarginalizedKernel:
    """Metropolis-Hastings over tree-structure ensembles with leaves integrated out.

    Caches the log marginal likelihood per ensemble and the tree priors. For
    the multistep variant the proposal is the ``r``-th power of the exact
    proposal matrix on an enumerated space.
    """

    def __init__(self, config: SamplerConfig, data, space=None):
        if not data.binned:
            raise ConfigError("the marginalized sampler needs binned covariates")
        self.config = config
        self.data = data
        self.n_bins = data.space.n_bins
        self.oracle = MoveOracle(data, config.max_internal, config.rule_selection)
        self._lml = {}
        self._prior = {}
        self.space = space
        self.Qr = None
        if config.variant == "multistep":
            if space is None:
                raise ConfigError("the multistep sampler needs an enumerated ensemble space")
            Q = q_matrix(space, config.weights, data, oracle=self.oracle)
            self.Qr = np.linalg.matrix_power(Q, config.r)
            self._cdf = np.cumsum(self.Qr, axis=1)

    def lam(self, sigma2):
        return self.config.priors.leaf_lambda(sigma2, self.config.m)

    def log_lik(self, trees, sigma2):
        key = (trees, sigma2)
        val = self._lml.get(key)
        if val is None:
            val = log_marginal_likelihood(trees, self.data.X, self.data.y, sigma2, self.lam(sigma2))
            self._lml[key] = val
        return val

    def log_prior_tree(self, tree):
        val = self._prior.get(tree)
        if val is None:
            val = log_tree_prior(tree, self.config.priors, self.n_bins)
            self._prior[tree] = val
        return val

    def log_prior(self, trees):
        return sum(self.log_prior_tree(t) for t in trees)

    def log_accept(self, cur, new, q_fwd, q_bwd, sigma2, T):
        if q_bwd <= 0:
            return -math.inf
        return (
            self.log_prior(new) - self.log_prior(cur)
            + math.log(q_bwd) - math.log(q_fwd)
            + (self.log_lik(new, sigma2) - self.log_lik(cur, sigma2)) / T
        )

    def propose(self, trees, rng):
        """Returns ``(new_trees, q_fwd, q_bwd, kind_index)``."""
        if self.Qr is not None:
            i = self.space.index[trees]
            j = int(np.searchsorted(self._cdf[i], rng.random() * self._cdf[i, -1], side="right"))
            j = min(j, len(self.space) - 1)
            return self.space.tses[j], self.Qr[i, j], self.Qr[j, i], 4 if i == j else 0
        k = int(rng.integers(len(trees)))
        prop = propose(trees[k], self.config.weights, self.data, rng, self.oracle)
        kind = 4 if prop.noop else KINDS.index(prop.move.kind)
        new = trees[:k] + (prop.tree,) + trees[k + 1 :]
        return new, prop.q_fwd, prop.q_bwd, kind

    def step(self, trees, sigma2, rng, T=1.0):
        """One transition; returns ``(trees, accepted, kind)``."""
        if self.config.lazy and rng.random() < 0.5:
            return trees, False, 4
        new, q_fwd, q_bwd, kind = self.propose(trees, rng)
        if new == trees:
            return trees, False, kind
        if math.log(1.0 - rng.random()) < self.log_accept(trees, new, q_fwd, q_bwd, sigma2, T):
            return new, True, kind
        return trees, False, kind


def step_marginalized(state: ChainState, data, config: SamplerConfig, rng, kernel=None, T=1.0):
    """One move of the marginalized sampler (structure only)."""
    if config.variant == "default":
        raise ConfigError("step_marginalized needs a marginalized-family variant")
    if kernel is None:
        kernel = MarginalizedKernel(config, data)
    state.trees, acc, kind = kernel.step(state.trees, state.sigma2, rng, T)
    state.iteration += 1
    return state, int(acc), kind


# ---------------------------------------------------------------------------
# chain drivers


def _test_matrix(data, test_data):
    if test_data is None:
        return np.zeros((0, data.d), dtype=np.int32)
    return test_data.X


def run_chain(config: SamplerConfig, data, init=None, test_data=None, space=None, chain: int = 0) -> ChainTrace:
    rng = np.random.default_rng(config.seed)
    X_test = _test_matrix(data, test_data)
    state = init_state(config, data, init)
    iters = config.iterations
    keep_from = 0 if config.keep_burnin else config.burn_in
    kept = iters - keep_from
    rec = {
        "sigma2": np.zeros(kept),
        "accept": np.zeros(kept, dtype=np.int64),
        "move_kind": np.zeros(kept, dtype=np.int64),
        "leaf_count_total": np.zeros(kept, dtype=np.int64),
    }
    n_test = X_test.shape[0] if config.record_predictions else 0
    preds = np.zeros((kept, n_test))
    kernel = None if config.variant == "default" else MarginalizedKernel(config, data, space)
    pri = config.priors

    for it in range(iters):
        T = config.temperature.at(it, iters)
        if kernel is None:
            state, acc, kind = step_default(state, data, config, rng, T, X_test)
            test_pred = state.forest.test_fit if n_test else None
            n_leaves = int(state.forest.n_leaves().sum())
        else:
            state, acc, kind = step_marginalized(state, data, config, rng, kernel, T)
            test_pred = None
            n_leaves = sum(t.n_leaves for t in state.trees)
            if n_test or pri.sigma2 is None:
                mu = sample_leaf_params_marginalized(state.trees, data.X, data.y, state.sigma2, kernel.lam(state.sigma2), rng)
                offs = np.cumsum([0] + [t.n_leaves for t in state.trees])
                values = [mu[offs[j] : offs[j + 1]] for j in range(len(state.trees))]
                if n_test:
                    test_pred = ensemble_predict(state.trees, values, X_test)
                if pri.sigma2 is None:
                    resid = data.y - ensemble_predict(state.trees, values, data.X)
                    state.sigma2 = draw_sigma2(float(resid @ resid), data.n, pri.nu, state.lam_cal, rng)
        k = it - keep_from
        if k >= 0:
            rec["sigma2"][k] = state.sigma2
            rec["accept"][k] = acc
            rec["move_kind"][k] = kind
            rec["leaf_count_total"][k] = n_leaves
            if n_test:
                preds[k] = test_pred
    state.sync()
    return ChainTrace(
        chain=chain,
        seed=config.seed,
        iteration=np.arange(keep_from, iters),
        sigma2=rec["sigma2"],
        accept=rec["accept"],
        move_kind=rec["move_kind"],
        leaf_count_total=rec["leaf_count_total"],
        test_pred=preds,
        final_trees=tuple(state.trees),
    )


def _run_one(args):
    config, data, init, test_data, space, chain = args
    return run_chain(config, data, init, test_data, space, chain)


def run_chains(
    config: SamplerConfig,
    data,
    n_chains: int,
    base_seed: int,
    test_data=None,
    init=None,
    space=None,
    workers: int = 1,
):
    """Independent chains seeded ``base_seed + i``; results do not depend on ``workers``."""
    if n_chains < 1:
        raise ConfigError("n_chains must be at least 1")
    tasks = [
        (config.with_seed(base_seed + i), data, init, test_data, space, i)
        for i in range(n_chains)
    ]
    if workers <= 1 or n_chains == 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, n_chains)) as pool:
        return list(pool.map(_run_one, tasks))
