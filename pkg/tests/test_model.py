import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bartlab.covariates import CovariateSpace, DgpSpec, sample_dgp
from bartlab.errors import ConfigError
from bartlab.model import (
    Priors,
    bic,
    calibrate_sigma2_scale,
    delta_bic,
    design_matrix,
    draw_sigma2,
    ensemble_predict,
    log_conditional_tree_likelihood,
    log_ensemble_prior,
    log_marginal_likelihood,
    log_tree_prior,
    sample_leaf_params_conditional,
    sample_leaf_params_marginalized,
    sample_sigma2,
    sample_split_weights,
)
from bartlab.optset import enumerate_trees
from bartlab.trees import Tree, trivial_tree

from conftest import additive_spec
from test_trees import _random_tree


def gaussian_oracle(psi, y, sigma2, lam):
    cov = sigma2 * np.eye(len(y)) + (sigma2 / lam) * psi @ psi.T
    return stats.multivariate_normal(np.zeros(len(y)), cov).logpdf(y)


def random_instance(rng):
    n = int(rng.integers(1, 31))
    n_bins = np.array([4, 3])
    X = np.stack([rng.integers(0, k, n) for k in n_bins], axis=1).astype(np.int32)
    trees = []
    while True:
        m = int(rng.integers(1, 4))
        trees = [Tree(_random_tree(rng, n_bins)) for _ in range(m)]
        if sum(t.n_leaves for t in trees) <= 10:
            break
    y = rng.normal(scale=rng.uniform(0.1, 3), size=n)
    return trees, X, y, float(rng.uniform(0.05, 5)), float(rng.uniform(0.05, 20))


# ---------------------------------------------------------------------------
# priors


def test_priors_validation():
    for kw in (dict(alpha=1.0), dict(beta=-1), dict(k=0), dict(lam=0), dict(sigma2=-1), dict(q=1.0), dict(split_prior="x")):
        with pytest.raises(ConfigError):
            Priors(**kw)


def test_trivial_tree_prior():
    assert log_tree_prior(trivial_tree(), Priors(), [2, 2]) == pytest.approx(math.log(0.05))


def test_split_probability_at_root():
    assert Priors().p_split(0) == pytest.approx(0.95)


def test_one_split_prior():
    tree = Tree((0, 0, (), ()))
    expect = math.log(0.95) + 2 * math.log(1 - 0.95 * 2**-2) - math.log(2)
    assert log_tree_prior(tree, Priors(), [2, 2]) == pytest.approx(expect)


def test_dirichlet_prior_uniform_weights_match_feature_first():
    tree = Tree((0, 1, (), ()))
    lp = log_tree_prior(tree, Priors(split_prior="dirichlet"), [4, 2])
    # feature 0 with prob 1/2, threshold 1 of 3
    expect = math.log(0.95) - math.log(2) - math.log(3)
    leaves = sum(math.log1p(-0.95 / 4) for _ in range(2))
    assert lp == pytest.approx(expect + leaves)


@pytest.mark.parametrize("B,K", [(2, 3), (3, 2)])
def test_prior_is_subprobability_on_enumeration(B, K):
    sp = CovariateSpace.grid(2, B)
    lps = np.array([log_tree_prior(t, Priors(), sp.n_bins) for t in enumerate_trees(sp, K)])
    assert np.all(lps <= 0)
    total = np.exp(lps).sum()
    assert 0 < total <= 1 + 1e-12


def test_ensemble_prior_is_sum():
    ts = [trivial_tree(), Tree((1, 0, (), ()))]
    assert log_ensemble_prior(ts, Priors(), [2, 2]) == pytest.approx(sum(log_tree_prior(t, Priors(), [2, 2]) for t in ts))


def test_leaf_lambda():
    p = Priors(k=2)
    assert p.sigma_mu(4) == pytest.approx(0.5 / (2 * 2))
    assert p.leaf_lambda(1.0, 4) == pytest.approx(1 / 0.125**2)
    assert Priors(lam=3.0).leaf_lambda(9.0, 4) == 3.0


# ---------------------------------------------------------------------------
# design matrix and marginal likelihood


def test_design_matrix_trivial_and_row_sums(rng):
    X = rng.integers(0, 3, size=(20, 2)).astype(np.int32)
    assert np.all(design_matrix([trivial_tree()], X).psi == 1)
    for _ in range(10):
        trees = [Tree(_random_tree(rng, np.array([3, 3]))) for _ in range(3)]
        dm = design_matrix(trees, X)
        np.testing.assert_array_equal(dm.psi.sum(axis=1), 3)
        assert dm.b == sum(t.n_leaves for t in trees)
        for j, t in enumerate(trees):
            block = dm.psi[:, dm.offsets[j] : dm.offsets[j + 1]]
            G = block.T @ block
            np.testing.assert_array_equal(G, np.diag(np.diag(G)))


def test_lml_single_point():
    y = np.array([1.7])
    val = log_marginal_likelihood([trivial_tree()], np.zeros((1, 1), dtype=np.int32), y, 2.0, 4.0)
    assert val == pytest.approx(stats.norm(0, math.sqrt(2.0 * 1.25)).logpdf(1.7), rel=1e-12)


def test_lml_matches_gaussian_density():
    rng = np.random.default_rng(1)
    for _ in range(200):
        trees, X, y, sigma2, lam = random_instance(rng)
        psi = design_matrix(trees, X).psi
        got = log_marginal_likelihood(trees, X, y, sigma2, lam)
        assert got == pytest.approx(gaussian_oracle(psi, y, sigma2, lam), rel=1e-8)


def test_lml_zero_response():
    rng = np.random.default_rng(3)
    trees, X, _, sigma2, lam = random_instance(rng)
    psi = design_matrix(trees, X).psi
    n = X.shape[0]
    expect = n * math.log(2 * math.pi * sigma2) + np.linalg.slogdet(psi.T @ psi / lam + np.eye(psi.shape[1]))[1]
    assert -2 * log_marginal_likelihood(trees, X, np.zeros(n), sigma2, lam) == pytest.approx(expect, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_lml_invariant_to_column_order(seed):
    rng = np.random.default_rng(seed)
    trees, X, y, sigma2, lam = random_instance(rng)
    psi = design_matrix(trees, X).psi
    perm = rng.permutation(psi.shape[1])
    a = log_marginal_likelihood(psi, X, y, sigma2, lam)
    b = log_marginal_likelihood(psi[:, perm], X, y, sigma2, lam)
    assert a == pytest.approx(b, rel=1e-10)


def test_lml_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        log_marginal_likelihood([trivial_tree()], np.zeros((1, 1)), np.zeros(1), 0.0, 1.0)


def test_conditional_likelihood_is_single_tree_lml(rng):
    for _ in range(20):
        X = rng.integers(0, 3, size=(25, 2)).astype(np.int32)
        tree = Tree(_random_tree(rng, np.array([3, 3])))
        if np.bincount(design_matrix([tree], X).psi.argmax(axis=1), minlength=tree.n_leaves).min() == 0:
            continue
        r = rng.normal(size=25)
        s2, smu = rng.uniform(0.2, 2), rng.uniform(0.1, 2)
        a = log_conditional_tree_likelihood(tree, X, r, s2, smu)
        b = log_marginal_likelihood([tree], X, r, s2, s2 / smu**2)
        assert a == pytest.approx(b, abs=1e-10)


def test_conditional_likelihood_one_leaf_zero_residual():
    n, s2, smu = 7, 1.3, 0.4
    val = log_conditional_tree_likelihood(trivial_tree(), np.zeros((n, 1), dtype=np.int32), np.zeros(n), s2, smu)
    assert val == pytest.approx(-(n / 2) * math.log(2 * math.pi * s2) - 0.5 * math.log(n * smu**2 / s2 + 1))


def test_conditional_likelihood_tight_prior_limit(rng):
    r = rng.normal(size=10)
    X = np.zeros((10, 1), dtype=np.int32)
    val = log_conditional_tree_likelihood(trivial_tree(), X, r, 1.0, 1e-7)
    assert val == pytest.approx(stats.norm.logpdf(r).sum(), abs=1e-8)


# ---------------------------------------------------------------------------
# BIC


def test_bic_trivial_tree(rng):
    y = rng.normal(size=30)
    X = np.zeros((30, 1), dtype=np.int32)
    val = bic([trivial_tree()], X, y, 2.0, 1)
    expect = np.sum((y - y.mean()) ** 2) / 2.0 + math.log(30) + 30 * math.log(2 * math.pi * 2.0)
    assert val == pytest.approx(expect)
    assert delta_bic(val, 3.0) == val - 3.0


def test_bic_tracks_lml():
    spec = additive_spec(noise_sd=1.0)
    ens = [Tree((0, 0, (), ())), Tree((1, 0, (), ()))]
    gaps = []
    for n in (100, 1000, 10_000):
        ds = sample_dgp(spec, n, 0)
        gaps.append(-2 * log_marginal_likelihood(ens, ds.X, ds.y, 1.0, 1.0) - bic(ens, ds.X, ds.y, 1.0, 3))
    assert max(abs(g) for g in gaps) < 50


def test_bic_depends_only_on_column_space(rng):
    X = np.array([[a, b] for a in range(2) for b in range(2)] * 5, dtype=np.int32)
    y = rng.normal(size=20)
    a = [Tree((0, 0, (), ())), Tree((1, 0, (), ()))]
    b = [Tree((1, 0, (), ())), Tree((0, 0, (), ()))]
    c = [Tree((0, 0, (), ())), Tree((1, 0, (), ())), trivial_tree()]
    assert bic(a, X, y, 1.0, 3) == pytest.approx(bic(b, X, y, 1.0, 3))
    assert bic(a, X, y, 1.0, 3) == pytest.approx(bic(c, X, y, 1.0, 3))


# ---------------------------------------------------------------------------
# conditional draws


def test_conditional_leaf_draw_limits(rng):
    X = np.array([[0], [1]], dtype=np.int32)
    tree = Tree((0, 0, (), ()))
    draws = np.array([sample_leaf_params_conditional(tree, X, [2.0, -1.0], 1e-6, 1e6, rng) for _ in range(5)])
    np.testing.assert_allclose(draws, [[2.0, -1.0]] * 5, atol=1e-2)
    zero = np.array([sample_leaf_params_conditional(tree, X, [0.0, 0.0], 1.0, 1.0, rng) for _ in range(4000)])
    assert np.abs(zero.mean(axis=0)).max() < 4 * math.sqrt(0.5 / 4000)


def test_conditional_leaf_draw_moments():
    rng = np.random.default_rng(0)
    X = np.array([[0]] * 3 + [[1]] * 5, dtype=np.int32)
    tree = Tree((0, 0, (), ()))
    r = np.array([1.0, 2.0, 0.5, -1, -1, 0, 2, 1])
    s2, smu = 0.7, 1.5
    draws = np.array([sample_leaf_params_conditional(tree, X, r, s2, smu, rng) for _ in range(100_000)])
    counts = np.array([3, 5])
    sums = np.array([3.5, 1.0])
    var = 1 / (counts / s2 + 1 / smu**2)
    mean = var * sums / s2
    se = np.sqrt(var / len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)
    assert np.all(np.abs(draws.var(axis=0) - var) < 3 * var * math.sqrt(2 / len(draws)))


def test_marginalized_draw_reduces_to_conditional():
    X = np.array([[0]] * 3 + [[1]] * 5, dtype=np.int32)
    tree = Tree((0, 0, (), ()))
    y = np.linspace(-1, 1, 8)
    s2, smu = 0.7, 1.5
    _, mean, cov = sample_leaf_params_marginalized([tree], X, y, s2, s2 / smu**2, np.random.default_rng(0), True)
    var = 1 / (np.array([3, 5]) / s2 + 1 / smu**2)
    np.testing.assert_allclose(mean, var * np.array([y[:3].sum(), y[3:].sum()]) / s2)
    np.testing.assert_allclose(cov, np.diag(var))
    _, mean0, _ = sample_leaf_params_marginalized([tree], X, np.zeros(8), s2, 1.0, np.random.default_rng(0), True)
    np.testing.assert_array_equal(mean0, 0)


def test_marginalized_draw_covariance():
    rng = np.random.default_rng(9)
    X = np.array([[a, b] for a in range(2) for b in range(2)] * 3, dtype=np.int32)
    trees = [Tree((0, 0, (), ())), Tree((1, 0, (), ()))]
    y = rng.normal(size=12)
    psi = design_matrix(trees, X).psi
    s2, lam = 0.8, 2.0
    target = s2 * np.linalg.inv(psi.T @ psi + lam * np.eye(4))
    n = 100_000
    draws = np.array([sample_leaf_params_marginalized(psi, X, y, s2, lam, rng) for _ in range(n)])
    emp = np.cov(draws.T)
    # standard error of a sample covariance entry: sqrt((s_ii s_jj + s_ij^2) / n)
    d = np.diag(target)
    se = np.sqrt((np.outer(d, d) + target**2) / n)
    assert np.all(np.abs(emp - target) < 3.5 * se)


def test_sigma2_concentrates(rng):
    n, s2 = 10_000, 0.6
    draws = np.array([draw_sigma2(s2 * n, n, 3.0, 0.1, rng) for _ in range(1000)])
    assert abs(draws.mean() / s2 - 1) < 0.05
    assert draws.std() / draws.mean() < 0.05


def test_sigma2_mean_matches_scaled_inverse_chi2(rng):
    nu, lam, ssr, n = 3.0, 0.4, 12.0, 20
    draws = np.array([draw_sigma2(ssr, n, nu, lam, rng) for _ in range(100_000)])
    df = nu + n
    scale = (nu * lam + ssr) / df
    mean = df * scale / (df - 2)
    sd = math.sqrt(2 * df**2 * scale**2 / ((df - 2) ** 2 * (df - 4)))
    assert abs(draws.mean() - mean) < 3 * sd / math.sqrt(len(draws))


def test_sigma2_calibration_quantile():
    y = np.random.default_rng(0).normal(size=500)
    lam = calibrate_sigma2_scale(y, 3.0, 0.9)
    # P(sigma2 < var(y)) = q under the scaled inverse-chi-square prior
    p = 1 - stats.chi2.cdf(3.0 * lam / np.var(y, ddof=1), 3.0)
    assert p == pytest.approx(0.9)


def test_sample_sigma2_uses_residuals(rng):
    X = np.zeros((50, 1), dtype=np.int32)
    y = rng.normal(size=50)
    v = sample_sigma2([trivial_tree()], [np.array([y.mean()])], X, y, Priors(), rng)
    assert v > 0


def test_split_weights_are_a_distribution(rng):
    w = sample_split_weights([3, 0, 1], 1.0, rng)
    assert w.shape == (3,) and w.sum() == pytest.approx(1.0) and np.all(w > 0)


def test_ensemble_predict(rng):
    X = np.array([[0, 1], [1, 0]], dtype=np.int32)
    trees = [Tree((0, 0, (), ())), trivial_tree()]
    np.testing.assert_allclose(ensemble_predict(trees, [np.array([1.0, 2.0]), np.array([0.5])], X), [1.5, 2.5])
    del rng


def test_grid_space_import_is_consistent():
    assert DgpSpec.additive(2, 2, additive_spec().components).space() == CovariateSpace.grid(2, 2)
