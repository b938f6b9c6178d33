"""Exact and Monte Carlo analysis of generalised Bernoulli-Laplace urn chains."""

from .errors import CapExceeded, ConfigError, DegenerateModel, StepBudgetExceeded, UrnlabError
from .kernels import ChainSpec, build_kernel
from .perms import Permutation, PermutationMeasure, spectral_report
from .statespace import CentreSpec, Configuration, Margins, enumerate_states, stationary_table

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CapExceeded",
    "CentreSpec",
    "ChainSpec",
    "ConfigError",
    "Configuration",
    "DegenerateModel",
    "Margins",
    "Permutation",
    "PermutationMeasure",
    "StepBudgetExceeded",
    "UrnlabError",
    "build_kernel",
    "enumerate_states",
    "spectral_report",
    "stationary_table",
]
