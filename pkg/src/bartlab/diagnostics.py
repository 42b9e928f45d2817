"""Convergence and predictive metrics computed from chain traces."""

from __future__ import annotations

import csv
from typing import Sequence

import numpy as np

from .errors import DiagnosticError

__all__ = [
    "SUMMARY_PROBS",
    "as_scalar_chains",
    "gelman_rubin",
    "rmse_trace",
    "posterior_rmse",
    "coverage",
    "quantile_traces",
    "summarize",
    "write_summary_csv",
]

SUMMARY_PROBS = (0.05, 0.25, 0.5, 0.75, 0.95)


def as_scalar_chains(chains) -> np.ndarray:
    """``k x n`` float array; at least two chains of at least two draws each."""
    rows = chains if isinstance(chains, np.ndarray) else [np.asarray(c, dtype=float) for c in chains]
    if len({np.shape(c) for c in rows}) > 1:
        raise DiagnosticError("chains must have equal lengths")
    z = np.asarray(rows, dtype=float)
    if z.ndim != 2:
        raise DiagnosticError("chains must have equal lengths")
    if z.shape[0] < 2 or z.shape[1] < 2:
        raise DiagnosticError("need at least 2 chains of length at least 2")
    return z


def gelman_rubin(chains) -> float:
    """Potential scale reduction factor."""
    z = as_scalar_chains(chains)
    k, n = z.shape
    means = z.mean(axis=1)
    B = n / (k - 1) * np.sum((means - means.mean()) ** 2)
    W = z.var(axis=1, ddof=1).mean()
    if not W > 0:
        raise DiagnosticError("within-chain variance is zero; R-hat is undefined")
    V = (n - 1) / n * W + B / n
    return float(np.sqrt(V / W))


def _target(test, use_f: bool) -> np.ndarray:
    if isinstance(test, np.ndarray) or isinstance(test, (list, tuple)):
        t = np.asarray(test, dtype=float)
    elif use_f:
        if test.f is None:
            raise DiagnosticError("test data carries no true function values")
        t = test.f
    else:
        t = test.y
    if t.size == 0:
        raise DiagnosticError("empty test set")
    return t


def _preds(trace) -> np.ndarray:
    p = trace.test_pred
    if p.ndim != 2 or p.shape[1] == 0:
        raise DiagnosticError("trace has no recorded test predictions")
    return p


def rmse_trace(trace, test, use_f: bool = False) -> np.ndarray:
    """Per-iteration test RMSE; ``use_f`` scores against the noiseless function."""
    target = _target(test, use_f)
    return np.sqrt(np.mean((_preds(trace) - target) ** 2, axis=1))


def posterior_rmse(traces: Sequence, test, use_f: bool = False) -> float:
    """RMSE of the prediction averaged over all iterations of all chains."""
    target = _target(test, use_f)
    mean = np.mean(np.vstack([_preds(t) for t in traces]), axis=0)
    return float(np.sqrt(np.mean((mean - target) ** 2)))


def coverage(traces: Sequence, test, mode: str = "predictive", level: float = 0.95, seed: int = 0) -> float:
    """Fraction of test points inside the central ``level`` posterior interval.

    ``predictive`` adds ``N(0, sigma2_t)`` noise to every draw and compares
    with ``y``; ``function`` uses the raw draws and compares with the true
    function. The noise for chain ``c`` comes from its own stream seeded by
    ``(seed, c)`` and is drawn in (iteration, point) order.
    """
    if not 0 < level < 1:
        raise DiagnosticError("level must lie in (0, 1)")
    if mode == "predictive":
        target = _target(test, False)
        draws = []
        for tr in traces:
            p = _preds(tr)
            rng = np.random.default_rng([seed, int(tr.chain)])
            draws.append(p + np.sqrt(tr.sigma2)[:, None] * rng.standard_normal(p.shape))
    elif mode == "function":
        target = _target(test, True)
        draws = [_preds(tr) for tr in traces]
    else:
        raise DiagnosticError(f"unknown coverage mode {mode!r}")
    D = np.vstack(draws)
    if D.shape[1] != target.shape[0]:
        raise DiagnosticError("predictions and test set differ in size")
    a = (1 - level) / 2
    lo, hi = np.quantile(D, [a, 1 - a], axis=0)
    return float(np.mean((target >= lo) & (target <= hi)))


def quantile_traces(traces: Sequence, test=None, probs=SUMMARY_PROBS) -> dict:
    """Per-iteration quantiles of the test-prediction vector, one ``k x n``
    array per probability."""
    probs = tuple(float(p) for p in probs)
    if any(not 0 < p < 1 for p in probs):
        raise DiagnosticError("quantile probabilities must lie in (0, 1)")
    per_chain = [np.quantile(_preds(t), probs, axis=1) for t in traces]
    return {p: np.vstack([q[i] for q in per_chain]) for i, p in enumerate(probs)}


def _rhat_or_nan(z):
    try:
        return gelman_rubin(z)
    except DiagnosticError:
        return float("nan")


def summarize(traces: Sequence, test, dataset: str, n_train: int, config_hash: str, mode: str = "predictive") -> dict:
    use_f = mode == "function"
    row = {"dataset": dataset, "n_train": int(n_train), "config_hash": config_hash}
    row["rhat_rmse"] = _rhat_or_nan(np.vstack([rmse_trace(t, test, use_f) for t in traces]))
    for p, z in quantile_traces(traces, test).items():
        row[f"rhat_q{round(p * 100):02d}"] = _rhat_or_nan(z)
    row["coverage"] = coverage(traces, test, mode)
    row["rmse"] = posterior_rmse(traces, test, use_f)
    return row


SUMMARY_COLUMNS = (
    ["dataset", "n_train", "config_hash", "rhat_rmse"]
    + [f"rhat_q{round(p * 100):02d}" for p in SUMMARY_PROBS]
    + ["coverage", "rmse"]
)


def write_summary_csv(path, rows, extra_columns=()):
    cols = list(SUMMARY_COLUMNS) + [c for c in extra_columns if c not in SUMMARY_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
