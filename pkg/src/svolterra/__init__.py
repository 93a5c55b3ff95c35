"""Deterministic and stochastic Volterra equations with weakly singular kernels."""

from . import kernels, ldp, noise, resolvent, scenarios, spectral_spde, timegrid, volterra_sde
from .errors import (ConfigurationError, ConvergenceError, DomainError, NotInClassError,
                     SvolterraError)
from .timegrid import Grid, make_grid, refine

__version__ = "0.1.0"

__all__ = ["kernels", "ldp", "noise", "resolvent", "scenarios", "spectral_spde", "timegrid",
           "volterra_sde", "Grid", "make_grid", "refine", "SvolterraError", "ConfigurationError",
           "ConvergenceError", "DomainError", "NotInClassError", "__version__"]
