import itertools
import sys

import numpy as np
import pytest

from bartlab.covariates import AdditiveComponent, CovariateSpace, Dataset, DgpSpec, sample_dgp
from bartlab.model import Priors
from bartlab.samplers import SamplerConfig
from bartlab.trees import MoveWeights


def grid_dataset(d=2, B=2, reps=1, y=None, seed=0):
    """Every grid cell repeated ``reps`` times; ``y`` defaults to Gaussian noise."""
    cells = np.array(list(itertools.product(range(B), repeat=d)), dtype=np.int32)
    X = np.repeat(cells, reps, axis=0)
    if y is None:
        y = np.random.default_rng(seed).standard_normal(X.shape[0])
    return Dataset(X, y, CovariateSpace.grid(d, B))


def additive_spec(B=2, noise_sd=1.0):
    comps = [AdditiveComponent(0, (1,), (0.0, 1.0)), AdditiveComponent(1, (1,), (0.0, 1.0))]
    return DgpSpec.additive(2, B, comps, noise_sd)


def exact_config(m, K, T=1.0, lazy=True, weights=None, variant="marginalized"):
    return SamplerConfig(
        variant=variant,
        m=m,
        weights=weights or MoveWeights(),
        priors=Priors(sigma2=1.0, lam=1.0),
        temperature=T,
        lazy=lazy,
        iterations=2,
        burn_in=0,
        max_internal=K,
    )


@pytest.fixture
def additive_data():
    return sample_dgp(additive_spec(), 200, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
