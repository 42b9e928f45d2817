import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bartlab.diagnostics import (
    SUMMARY_COLUMNS,
    coverage,
    gelman_rubin,
    posterior_rmse,
    quantile_traces,
    rmse_trace,
    summarize,
    write_summary_csv,
)
from bartlab.errors import DiagnosticError
from bartlab.samplers import ChainTrace


def trace(pred, sigma2=None, chain=0):
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    n = pred.shape[0]
    s2 = np.full(n, 1e-30) if sigma2 is None else np.broadcast_to(np.asarray(sigma2, dtype=float), (n,)).copy()
    z = np.zeros(n, dtype=np.int64)
    return ChainTrace(chain, chain, np.arange(n), s2, z, z, z + 1, pred)


finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_rhat_hand_fixture():
    assert gelman_rubin([[1, 2, 3], [2, 3, 4]]) == pytest.approx(math.sqrt(7 / 6), abs=1e-12)


def test_rhat_identical_chains():
    z = np.array([0.3, -1.0, 2.0, 0.7, 1.1])
    assert gelman_rubin([z, z, z]) == pytest.approx(math.sqrt(4 / 5), abs=1e-12)


def test_rhat_errors():
    with pytest.raises(DiagnosticError):
        gelman_rubin([[1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(DiagnosticError):
        gelman_rubin([[1.0, 2.0, 3.0]])
    with pytest.raises(DiagnosticError):
        gelman_rubin([[1.0, 2.0], [1.0, 2.0, 3.0]])


@settings(max_examples=100, deadline=None)
@given(arrays(float, st.tuples(st.integers(2, 5), st.integers(2, 20)), elements=finite), st.floats(0.01, 100))
def test_rhat_scale_invariance_and_floor(z, c):
    if z.var(axis=1, ddof=1).mean() < 1e-9:
        return
    r = gelman_rubin(z)
    n = z.shape[1]
    assert r >= math.sqrt((n - 1) / n) - 1e-12
    assert gelman_rubin(c * z) == pytest.approx(r, rel=1e-9)
    assert gelman_rubin(-z) == pytest.approx(r, rel=1e-9)


def test_rmse_examples():
    y = np.array([1.0, 2.0, 4.0])
    assert rmse_trace(trace([y, y]), y).tolist() == [0.0, 0.0]
    c = 2.0
    got = rmse_trace(trace([[c, c, c]]), y)[0]
    assert got == pytest.approx(math.sqrt(((1 - c) ** 2 + 0 + (4 - c) ** 2) / 3))
    with pytest.raises(DiagnosticError):
        rmse_trace(trace([[1.0]]), np.array([]))


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 8), st.integers(1, 6)), elements=finite))
def test_posterior_rmse_jensen(pred):
    y = np.linspace(-1, 1, pred.shape[1])
    tr = trace(pred)
    assert posterior_rmse([tr], y) <= rmse_trace(tr, y).mean() + 1e-9


def test_rmse_function_mode_uses_f():
    class Test:
        y = np.array([0.0, 0.0])
        f = np.array([1.0, 1.0])

    tr = trace([[1.0, 1.0]])
    assert rmse_trace(tr, Test(), use_f=True)[0] == 0.0
    assert rmse_trace(tr, Test())[0] == 1.0
    Test.f = None
    with pytest.raises(DiagnosticError):
        rmse_trace(tr, Test(), use_f=True)


def test_coverage_degenerate_and_outside():
    y = np.array([0.5, -1.0, 3.0])
    traces = [trace(np.tile(y, (20, 1)), chain=c) for c in range(2)]
    assert coverage(traces, y) == 1.0
    draws = np.random.default_rng(0).uniform(0, 1, (50, 2))
    f = np.array([0.5, 7.0])
    assert coverage([trace(draws)], f, mode="function") == 0.5
    with pytest.raises(DiagnosticError):
        coverage(traces, y, mode="other")
    with pytest.raises(DiagnosticError):
        coverage(traces, y, level=1.0)


def test_coverage_calibrated_on_conjugate_toy():
    # theta_i | data ~ N(m_i, s^2); the truth is itself a posterior draw
    rng = np.random.default_rng(3)
    n_pts, n_draws = 10_000, 1000
    m = rng.normal(size=n_pts)
    s = 0.3
    truth = m + s * rng.standard_normal(n_pts)
    traces = [trace(m + s * rng.standard_normal((n_draws // 2, n_pts)), chain=c) for c in range(2)]
    assert coverage(traces, truth, mode="function") == pytest.approx(0.95, abs=0.02)


def test_predictive_coverage_calibrated():
    rng = np.random.default_rng(4)
    n_pts, n_draws, sigma = 5000, 800, 0.7
    mu = rng.normal(size=n_pts)
    y = mu + sigma * rng.standard_normal(n_pts)
    traces = [trace(np.tile(mu, (n_draws, 1)), sigma**2, chain=c) for c in range(2)]
    assert coverage(traces, y) == pytest.approx(0.95, abs=0.02)
    assert coverage(traces, y, seed=5) != coverage(traces, y, seed=6)
    assert coverage(traces, y, seed=5) == coverage(traces, y, seed=5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_coverage_range_and_monotone(seed):
    rng = np.random.default_rng(seed)
    draws = rng.normal(size=(30, 12))
    f = rng.normal(size=12) * 2
    tr = [trace(draws)]
    levels = [0.5, 0.8, 0.9, 0.95, 0.99]
    cov = [coverage(tr, f, mode="function", level=lv) for lv in levels]
    assert all(0 <= c <= 1 for c in cov)
    assert all(a <= b for a, b in zip(cov, cov[1:]))


def test_quantile_traces():
    pred = np.array([[-2.0, -1.0, 0.0, 1.0, 2.0], [3.0, 3.0, 3.0, 3.0, 3.0]])
    q = quantile_traces([trace(pred), trace(pred[::-1], chain=1)], probs=(0.25, 0.5, 0.75))
    assert q[0.5].shape == (2, 2)
    assert q[0.5][0, 0] == 0.0 and q[0.5][0, 1] == 3.0
    assert np.all(q[0.25] <= q[0.75])
    with pytest.raises(DiagnosticError):
        quantile_traces([trace(pred)], probs=(0.0,))


def test_summary_row_and_csv(tmp_path):
    rng = np.random.default_rng(0)
    y = rng.normal(size=6)
    traces = [trace(y + 0.1 * rng.standard_normal((40, 6)), 0.01, chain=c) for c in range(3)]
    row = summarize(traces, y, "toy", 100, "abc")
    assert set(row) == set(SUMMARY_COLUMNS)
    assert row["rhat_rmse"] > 0.5 and 0 <= row["coverage"] <= 1
    # a single chain cannot support R-hat
    assert math.isnan(summarize(traces[:1], y, "toy", 100, "abc")["rhat_q50"])
    p = tmp_path / "s.csv"
    write_summary_csv(p, [dict(row, m=10)], extra_columns=("m",))
    got = list(csv.DictReader(p.open()))
    assert list(got[0]) == list(SUMMARY_COLUMNS) + ["m"]
    assert float(got[0]["rmse"]) == row["rmse"]
