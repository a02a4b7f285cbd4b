"""Bayesian inference from differentially private summaries when the sample size is itself private."""

from .mechanisms import NoiseFamily, NoiseSpec, PrivacyBudget
from .n_posterior import NPosterior, build_n_posterior

__version__ = "0.1.0"

__all__ = ["NoiseFamily", "NoiseSpec", "PrivacyBudget", "NPosterior", "build_n_posterior"]
