"""Bayesian additive regression trees with exact analysis of small chains."""

from .covariates import CovariateSpace, Dataset, DgpSpec, AdditiveComponent, sample_dgp
from .errors import (
    BartlabError,
    CapacityError,
    ConfigError,
    DiagnosticError,
    InfeasibleError,
    IngestionError,
    NumericalError,
    ReducibleChainError,
)
from .model import Priors
from .samplers import SamplerConfig, Schedule, run_chain, run_chains
from .trees import MoveWeights, Tree

__version__ = "0.1.0"
