"""Replica equations of state and Monte Carlo experiments for l1-regularized Ising model selection."""

from . import asymptotics, diagnostics, estimators, harness, ising_sim, replica_eos, spectra

__version__ = "0.1.0"

__all__ = ["asymptotics", "diagnostics", "estimators", "harness", "ising_sim", "replica_eos", "spectra",
           "__version__"]
