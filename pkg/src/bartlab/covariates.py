"""Datasets, covariate discretization and the synthetic data-generating processes.

Binned covariates are stored as 0-based integer codes. A split on feature ``f``
at threshold index ``t`` sends a row left when ``code <= t``; the raw value of
that threshold is ``space.thresholds[f][t]``. For the grid ``{1..B}^d`` the codes
are ``x - 1`` and the raw thresholds are ``1..B-1``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, IngestionError

__all__ = [
    "CovariateSpace",
    "ScaleParams",
    "Dataset",
    "AdditiveComponent",
    "DgpSpec",
    "sample_dgp",
    "load_csv",
    "bin_features",
    "apply_bins",
    "scale_response",
    "unscale",
    "split_train_test",
    "subsample",
    "grid_points",
]


@dataclass(frozen=True)
class CovariateSpace:
    thresholds: tuple

    def __post_init__(self):
        ths = tuple(np.asarray(t, dtype=float) for t in self.thresholds)
        for i, t in enumerate(ths):
            if t.ndim != 1:
                raise ConfigError(f"thresholds for feature {i} must be one-dimensional")
            if t.size > 1 and np.any(np.diff(t) <= 0):
                raise ConfigError(f"thresholds for feature {i} must be strictly increasing")
        object.__setattr__(self, "thresholds", ths)

    @classmethod
    def grid(cls, d: int, B: int) -> "CovariateSpace":
        if d < 1 or B < 2:
            raise ConfigError("grid space needs d >= 1 and B >= 2")
        return cls(tuple(np.arange(1, B, dtype=float) for _ in range(d)))

    @property
    def d(self) -> int:
        return len(self.thresholds)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([t.size + 1 for t in self.thresholds], dtype=np.int64)

    @property
    def size(self) -> int:
        return int(np.prod(self.n_bins))

    def __eq__(self, other):
        if not isinstance(other, CovariateSpace) or other.d != self.d:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.thresholds, other.thresholds))

    def __hash__(self):
        return hash(tuple(tuple(t.tolist()) for t in self.thresholds))


def grid_points(space: CovariateSpace) -> np.ndarray:
    """Every code vector of the space, in C order (last feature varies fastest)."""
    if space.size > 10**7:
        raise ConfigError(f"covariate space too large to enumerate ({space.size} cells)")
    axes = [range(int(k)) for k in space.n_bins]
    return np.array(list(itertools.product(*axes)), dtype=np.int32).reshape(-1, space.d)


@dataclass(frozen=True)
class ScaleParams:
    lo: float
    hi: float


@dataclass(frozen=True)
class Dataset:
    """``X`` holds raw feature values until binned, integer codes afterwards.

    ``f`` optionally carries the noiseless regression function at each row
    (synthetic data only).
    """

    X: np.ndarray
    y: np.ndarray
    space: Optional[CovariateSpace] = None
    scale: Optional[ScaleParams] = None
    f: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        X = np.asarray(self.X)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ConfigError("X must be a 2-d array")
        if y.shape != (X.shape[0],):
            raise ConfigError("y must have one entry per row of X")
        if X.shape[0] < 1:
            raise ConfigError("a dataset needs at least one row")
        if self.space is not None:
            X = np.ascontiguousarray(X, dtype=np.int32)
            if X.shape[1] != self.space.d:
                raise ConfigError("X columns do not match the covariate space")
            if X.size and (X.min() < 0 or np.any(X.max(axis=0) >= self.space.n_bins)):
                raise ConfigError("feature code outside its coded range")
        else:
            X = np.asarray(X, dtype=float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.f is not None:
            object.__setattr__(self, "f", np.asarray(self.f, dtype=float))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def binned(self) -> bool:
        return self.space is not None

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            f=None if self.f is None else self.f[idx],
        )


# ---------------------------------------------------------------------------
# synthetic data-generating processes


@dataclass(frozen=True)
class AdditiveComponent:
    """Step function of one grid feature: ``values[j]`` on the j-th piece.

    ``thresholds`` are raw grid values (``x <= thresholds[0]`` is the first piece).
    """

    feature: int
    thresholds: tuple
    values: tuple

    def __call__(self, x_raw: np.ndarray) -> np.ndarray:
        pieces = np.searchsorted(np.asarray(self.thresholds, dtype=float), x_raw, side="left")
        return np.asarray(self.values, dtype=float)[pieces]


_KINDS = ("additive_discrete", "low_dim_smooth", "piecewise_linear")
_DEFAULT_D = {"additive_discrete": 2, "low_dim_smooth": 10, "piecewise_linear": 20}


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    d: Optional[int] = None
    B: int = 2
    components: tuple = ()
    noise_sd: float = 1.0
    snr: float = 3.0
    rho: float = 0.01
    coef_seed: int = 0
    calibration_seed: int = 0
    calibration_draws: int = 1_000_000

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown DGP kind {self.kind!r}; expected one of {_KINDS}")
        if self.d is None:
            object.__setattr__(self, "d", _DEFAULT_D[self.kind])
        if self.kind == "low_dim_smooth" and self.d < 2:
            raise ConfigError("low_dim_smooth needs d >= 2")
        if self.kind == "piecewise_linear" and self.d < 15:
            raise ConfigError("piecewise_linear needs d >= 15")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")
        if self.snr <= 0:
            raise ConfigError("signal-to-noise ratio must be positive")
        if self.kind == "additive_discrete":
            if self.B < 2 or self.d < 1:
                raise ConfigError("additive_discrete needs B >= 2 and d >= 1")
            if not self.components:
                raise ConfigError("additive_discrete needs at least one component")
            comps = []
            for c in self.components:
                if not isinstance(c, AdditiveComponent):
                    c = AdditiveComponent(int(c[0]), tuple(c[1]), tuple(c[2]))
                th = np.asarray(c.thresholds, dtype=float)
                if not 0 <= c.feature < self.d:
                    raise ConfigError(f"component feature {c.feature} out of range")
                if th.size == 0 or np.any(np.diff(th) <= 0):
                    raise ConfigError("component thresholds must be non-empty and strictly increasing")
                if th[0] < 1 or th[-1] > self.B - 1 or np.any(th != np.round(th)):
                    raise ConfigError("component thresholds must be grid values in 1..B-1")
                if len(c.values) != th.size + 1:
                    raise ConfigError("a step table needs one more value than thresholds")
                if np.any(np.diff(np.asarray(c.values, dtype=float)) == 0):
                    raise ConfigError("adjacent step values must differ (every threshold is a knot)")
                comps.append(c)
            object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def additive(cls, d, B, components, noise_sd=1.0):
        return cls("additive_discrete", d=d, B=B, components=tuple(components), noise_sd=noise_sd)

    def space(self) -> CovariateSpace:
        if self.kind != "additive_discrete":
            raise ConfigError("only additive_discrete has a grid covariate space")
        return CovariateSpace.grid(self.d, self.B)

    def f_codes(self, X_codes: np.ndarray) -> np.ndarray:
        """Regression function of the additive DGP at coded grid points."""
        X_raw = np.asarray(X_codes) + 1
        out = np.zeros(X_raw.shape[0])
        for c in self.components:
            out += c(X_raw[:, c.feature])
        return out

    def f_grid(self) -> np.ndarray:
        return self.f_codes(grid_points(self.space()))


def _logistic_bump(x):
    return 2.0 / (1.0 + np.exp(-12.0 * (x - 0.5)))


@lru_cache(maxsize=16)
def _correlation_cholesky(d: int, rho: float) -> np.ndarray:
    sigma = np.full((d, d), rho)
    np.fill_diagonal(sigma, 1.0)
    return np.linalg.cholesky(sigma)


@lru_cache(maxsize=16)
def _smooth_noise_var(d, rho, snr, seed, draws):
    rng = np.random.default_rng(seed)
    L = _correlation_cholesky(d, rho)
    x = rng.standard_normal((draws, d)) @ L.T
    signal = _logistic_bump(x[:, 0]) * _logistic_bump(x[:, 1])
    return float(np.var(signal) / snr)


def _piecewise_coefs(d, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-15.0, 15.0, size=(3, d))


def sample_dgp(spec: DgpSpec, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ConfigError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if spec.kind == "additive_discrete":
        X = rng.integers(0, spec.B, size=(n, spec.d), dtype=np.int32)
        f = spec.f_codes(X)
        y = f + spec.noise_sd * rng.standard_normal(n)
        return Dataset(X, y, space=spec.space(), f=f)

    if spec.kind == "low_dim_smooth":
        d = spec.d
        L = _correlation_cholesky(d, spec.rho)
        X = rng.standard_normal((n, d)) @ L.T
        f = _logistic_bump(X[:, 0]) * _logistic_bump(X[:, 1])
        var = _smooth_noise_var(d, spec.rho, spec.snr, spec.calibration_seed, spec.calibration_draws)
        y = f + math.sqrt(var) * rng.standard_normal(n)
        return Dataset(X, y, f=f)

    # piecewise_linear
    d = spec.d
    L = _correlation_cholesky(d, spec.rho)
    X = ndtr(rng.standard_normal((n, d)) @ L.T)
    beta = _piecewise_coefs(d, spec.coef_seed)
    masks = np.zeros((3, d))
    masks[0, 0:5] = 1.0
    masks[1, 5:10] = 1.0
    masks[2, 10:15] = 1.0
    last = X[:, -1]
    regime = np.where(last < -0.4, 0, np.where(last < 0.4, 1, 2))
    f = np.einsum("ij,ij->i", X, (masks * beta)[regime])
    y = f + spec.noise_sd * rng.standard_normal(n)
    return Dataset(X, y, f=f)


# ---------------------------------------------------------------------------
# ingestion and preprocessing


def load_csv(path, target_column: str) -> Dataset:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise IngestionError(f"{path}: target column {target_column!r} not found in header")
        t = header.index(target_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {lineno}, column {col!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(vals[-1]):
                    raise IngestionError(f"{path}: row {lineno}, column {col!r}: missing or non-finite value")
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    data = np.array(rows)
    feats = [i for i in range(len(header)) if i != t]
    names = tuple(header[i] for i in feats)
    return Dataset(data[:, feats], data[:, t], feature_names=names)


def _unique_thresholds(v):
    u = np.unique(v)
    return u[:-1]


def _quantile_thresholds(v, k):
    probs = np.linspace(0.0, 1.0, k + 2)[1:-1]
    q = np.unique(np.quantile(v, probs, method="lower"))
    return q[q < v.max()]


def bin_features(dataset: Dataset, strategy: str = "unique", k: Optional[int] = None) -> Dataset:
    """Recode raw features as integer bins and record the split thresholds.

    ``unique``: every distinct value except the largest is a threshold.
    ``quantiles``: ``k`` evenly spaced probability points, deduplicated.
    """
    if dataset.binned:
        raise ConfigError("dataset is already binned")
    if strategy == "quantiles":
        if k is None or k < 1:
            raise ConfigError("quantile binning needs k >= 1")
    elif strategy != "unique":
        raise ConfigError(f"unknown binning strategy {strategy!r}")
    ths = []
    for j in range(dataset.d):
        v = dataset.X[:, j]
        ths.append(_unique_thresholds(v) if strategy == "unique" else _quantile_thresholds(v, k))
    space = CovariateSpace(tuple(ths))
    return apply_bins(dataset, space)


def apply_bins(dataset: Dataset, space: CovariateSpace) -> Dataset:
    """Code raw features against an existing set of thresholds (e.g. a test set)."""
    if dataset.binned:
        raise ConfigError("dataset is already binned")
    if dataset.d != space.d:
        raise ConfigError("feature count does not match the covariate space")
    codes = np.empty(dataset.X.shape, dtype=np.int32)
    for j, th in enumerate(space.thresholds):
        codes[:, j] = np.searchsorted(th, dataset.X[:, j], side="left")
    return replace(dataset, X=codes, space=space)


def scale_response(y):
    y = np.asarray(y, dtype=float)
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise ConfigError("cannot scale a constant response")
    return (y - lo) / (hi - lo) - 0.5, ScaleParams(lo, hi)


def unscale(y_scaled, params: ScaleParams):
    return (np.asarray(y_scaled, dtype=float) + 0.5) * (params.hi - params.lo) + params.lo


def split_train_test(dataset: Dataset, test_fraction: float, seed: int):
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    n = dataset.n
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test > n - 1:
        raise ConfigError(f"test_fraction {test_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(np.sort(perm[n_test:])), dataset.take(np.sort(perm[:n_test]))


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Draw ``n`` rows without replacement."""
    if not 1 <= n <= dataset.n:
        raise ConfigError(f"cannot subsample {n} rows from {dataset.n}")
    idx = np.random.default_rng(seed).choice(dataset.n, size=n, replace=False)
    return dataset.take(np.sort(idx))


def smooth_noise_variance(spec: DgpSpec) -> float:
    """Noise variance the low-dimensional smooth DGP adds to its signal."""
    return _smooth_noise_var(spec.d, spec.rho, spec.snr, spec.calibration_seed, spec.calibration_draws)
