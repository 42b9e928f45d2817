"""Priors, likelihoods and conjugate draws of the sum-of-trees model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .errors import ConfigError, NumericalError
from .trees import Tree, leaf_assignment

__all__ = [
    "Priors",
    "DesignMatrix",
    "log_tree_prior",
    "log_ensemble_prior",
    "design_matrix",
    "log_marginal_likelihood",
    "log_conditional_tree_likelihood",
    "bic",
    "delta_bic",
    "sample_leaf_params_conditional",
    "sample_leaf_params_marginalized",
    "calibrate_sigma2_scale",
    "sample_sigma2",
    "draw_sigma2",
    "sample_split_weights",
    "ensemble_predict",
]

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class Priors:
    """Hyperparameters.

    ``lam`` fixes the leaf precision ratio of the analyzed model; when it is
    ``None`` the leaf scale is ``sigma_mu = 0.5 / (k sqrt(m))``. ``sigma2`` set
    means fixed noise variance, otherwise a scaled inverse-chi-square prior
    with ``nu`` degrees of freedom and quantile ``q`` is used.
    """

    alpha: float = 0.95
    beta: float = 2.0
    k: float = 2.0
    lam: Optional[float] = None
    sigma2: Optional[float] = None
    nu: float = 3.0
    q: float = 0.9
    split_prior: str = "uniform"
    alpha_dir: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if self.k <= 0:
            raise ConfigError("k must be positive")
        if self.lam is not None and self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.sigma2 is not None and self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.nu <= 0 or not 0 < self.q < 1:
            raise ConfigError("need nu > 0 and q in (0, 1)")
        if self.split_prior not in ("uniform", "dirichlet"):
            raise ConfigError(f"unknown split prior {self.split_prior!r}")
        if self.alpha_dir <= 0:
            raise ConfigError("alpha_dir must be positive")

    def sigma_mu(self, m: int) -> float:
        return 0.5 / (self.k * math.sqrt(m))

    def leaf_lambda(self, sigma2: float, m: int) -> float:
        """Prior precision ratio ``sigma2 / sigma_mu**2`` of the leaf parameters."""
        if self.lam is not None:
            return self.lam
        return sigma2 / self.sigma_mu(m) ** 2

    def p_split(self, depth):
        return self.alpha * (1.0 + depth) ** (-self.beta)


def log_tree_prior(tree: Tree, priors: Priors, n_bins, split_weights=None) -> float:
    """Log probability of a tree structure under the depth-penalized split process.

    The valid rules at a node are the thresholds strictly inside its cell, so
    the prior does not depend on the data. ``split_weights`` are the feature
    probabilities of the Dirichlet variant (uniform when omitted).
    """
    n_bins = np.asarray(n_bins)
    w = None
    if priors.split_prior == "dirichlet":
        d = len(n_bins)
        w = np.full(d, 1.0 / d) if split_weights is None else np.asarray(split_weights, dtype=float)
    total = 0.0
    for path, node, depth in tree.nodes():
        lo, hi = tree.cell_bounds(path, n_bins)
        width = hi - lo
        n_rules = int(width.sum())
        ps = priors.p_split(depth)
        if not node:
            if n_rules > 0:
                total += math.log1p(-ps)
            continue
        f, t = node[0], node[1]
        if not lo[f] <= t < hi[f]:
            return -math.inf
        total += math.log(ps)
        if w is None:
            total -= math.log(n_rules)
        else:
            avail = width > 0
            total += math.log(w[f]) - math.log(w[avail].sum()) - math.log(width[f])
    return total


def log_ensemble_prior(trees: Sequence[Tree], priors: Priors, n_bins, split_weights=None) -> float:
    return sum(log_tree_prior(t, priors, n_bins, split_weights) for t in trees)


@dataclass(frozen=True)
class DesignMatrix:
    psi: np.ndarray
    offsets: np.ndarray  # column range of tree j is offsets[j]:offsets[j+1]

    @property
    def b(self) -> int:
        return self.psi.shape[1]


def design_matrix(trees: Sequence[Tree], X) -> DesignMatrix:
    X = np.asarray(X)
    n = X.shape[0]
    sizes = [t.n_leaves for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    psi = np.zeros((n, offsets[-1]))
    rows = np.arange(n)
    for j, t in enumerate(trees):
        psi[rows, offsets[j] + leaf_assignment(t, X)] = 1.0
    return DesignMatrix(psi, offsets)


def _as_psi(ensemble, X):
    if isinstance(ensemble, DesignMatrix):
        return ensemble.psi
    if isinstance(ensemble, np.ndarray):
        return ensemble
    return design_matrix(ensemble, X).psi


def _gram_eigen(psi):
    G = psi.T @ psi
    try:
        s, V = linalg.eigh(G)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition of the Gram matrix failed: {exc}") from exc
    if not np.all(np.isfinite(s)):
        raise NumericalError("non-finite Gram spectrum", condition=float("inf"))
    return np.clip(s, 0.0, None), V


def log_marginal_likelihood(ensemble, X, y, sigma2: float, lam: float) -> float:
    """``log p(y | E)`` with leaf parameters integrated out.

    ``ensemble`` may be a sequence of trees, a :class:`DesignMatrix` or a raw
    design matrix. The least-squares fit uses minimum-norm semantics, so rank
    deficient designs are handled.
    """
    if sigma2 <= 0 or lam <= 0:
        raise ConfigError("sigma2 and lambda must be positive")
    y = np.asarray(y, dtype=float)
    psi = _as_psi(ensemble, X)
    n = y.shape[0]
    s, V = _gram_eigen(psi)
    c = V.T @ (psi.T @ y)
    tol = max(s.max(initial=0.0), 1.0) * 1e-10 * psi.shape[1]
    pos = s > tol
    # residual of the least-squares fit plus the ridge correction on mu_LS
    ssr = float(y @ y - np.sum(c[pos] ** 2 / s[pos]))
    ridge = float(np.sum(c[pos] ** 2 * lam / (s[pos] * (s[pos] + lam))))
    logdet = float(np.sum(np.log1p(s / lam)))
    val = -0.5 * (n * (LOG_2PI + math.log(sigma2)) + logdet + (max(ssr, 0.0) + ridge) / sigma2)
    if not math.isfinite(val):
        raise NumericalError("log marginal likelihood is not finite", condition=float(s.max() / lam))
    return val


def _leaf_stats(tree, X, r):
    leaf = leaf_assignment(tree, X)
    counts = np.bincount(leaf, minlength=tree.n_leaves)
    sums = np.bincount(leaf, weights=r, minlength=tree.n_leaves)
    return counts, sums


def log_conditional_tree_likelihood(tree: Tree, X, r, sigma2: float, sigma_mu: float) -> float:
    """Evidence of the residual ``r`` under one tree with ``N(0, sigma_mu^2)`` leaves."""
    r = np.asarray(r, dtype=float)
    counts, sums = _leaf_stats(tree, X, r)
    if counts.min() == 0:
        raise NumericalError("tree has an empty leaf on the supplied rows")
    n = r.shape[0]
    ratio = sigma2 / sigma_mu**2
    return float(
        -0.5 * n * (LOG_2PI + math.log(sigma2))
        - 0.5 * np.sum(np.log1p(counts * sigma_mu**2 / sigma2))
        - 0.5 / sigma2 * (r @ r - np.sum(sums**2 / (counts + ratio)))
    )


def bic(ensemble, X, y, sigma2: float, df: int) -> float:
    y = np.asarray(y, dtype=float)
    psi = _as_psi(ensemble, X)
    coef, *_ = np.linalg.lstsq(psi, y, rcond=None)
    resid = y - psi @ coef
    n = y.shape[0]
    return float(resid @ resid / sigma2 + df * math.log(n) + n * (LOG_2PI + math.log(sigma2)))


def delta_bic(a: float, b: float) -> float:
    return a - b


def sample_leaf_params_conditional(tree: Tree, X, r, sigma2, sigma_mu, rng) -> np.ndarray:
    counts, sums = _leaf_stats(tree, X, np.asarray(r, dtype=float))
    var = 1.0 / (counts / sigma2 + 1.0 / sigma_mu**2)
    mean = var * sums / sigma2
    return mean + np.sqrt(var) * rng.standard_normal(tree.n_leaves)


def sample_leaf_params_marginalized(ensemble, X, y, sigma2, lam, rng, return_moments=False):
    """Joint Gaussian draw of all leaf parameters given the tree structures."""
    psi = _as_psi(ensemble, X)
    A = psi.T @ psi + lam * np.eye(psi.shape[1])
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky of the leaf posterior precision failed: {exc}") from exc
    mean = linalg.cho_solve((L, True), psi.T @ np.asarray(y, dtype=float))
    z = rng.standard_normal(psi.shape[1])
    draw = mean + math.sqrt(sigma2) * linalg.solve_triangular(L.T, z, lower=False)
    if return_moments:
        return draw, mean, sigma2 * linalg.cho_solve((L, True), np.eye(psi.shape[1]))
    return draw


def calibrate_sigma2_scale(y, nu: float, q: float) -> float:
    """Scale ``lam_cal`` of the inverse-chi-square prior putting mass ``q`` below var(y)."""
    y = np.asarray(y, dtype=float)
    s2 = float(np.var(y, ddof=1)) if y.size > 1 else float(y @ y)
    if s2 <= 0:
        s2 = 1.0
    return s2 * chi2.ppf(1.0 - q, nu) / nu


def draw_sigma2(ssr: float, n: int, nu: float, lam_cal: float, rng) -> float:
    """Scaled inverse-chi-square full conditional of the noise variance."""
    return float((nu * lam_cal + ssr) / rng.chisquare(nu + n))


def sample_sigma2(trees, leaf_values, X, y, priors: Priors, rng, lam_cal=None) -> float:
    """Draw ``sigma2`` given the ensemble; ``lam_cal`` defaults to the calibration on ``y``."""
    y = np.asarray(y, dtype=float)
    if lam_cal is None:
        lam_cal = calibrate_sigma2_scale(y, priors.nu, priors.q)
    resid = y - ensemble_predict(trees, leaf_values, X)
    return draw_sigma2(float(resid @ resid), y.shape[0], priors.nu, lam_cal, rng)


def sample_split_weights(split_counts, alpha_dir: float, rng) -> np.ndarray:
    """Conjugate update of the Dirichlet split-feature probabilities."""
    counts = np.asarray(split_counts, dtype=float)
    d = counts.size
    w = rng.dirichlet(alpha_dir / d + counts)
    return np.maximum(w, np.finfo(float).tiny)


def ensemble_predict(trees: Sequence[Tree], leaf_values, X) -> np.ndarray:
    """Sum-of-trees prediction; ``leaf_values`` is one vector per tree."""
    X = np.asarray(X)
    out = np.zeros(X.shape[0])
    for t, mu in zip(trees, leaf_values):
        out += np.asarray(mu)[leaf_assignment(t, X)]
    return out
