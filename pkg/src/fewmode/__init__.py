"""Spectral Galerkin toolkit for randomly forced 2D vorticity dynamics.

The package simulates the vorticity form of the incompressible 2D
Navier-Stokes equation on the torus, truncated to a finite box of real
Fourier modes and driven by white noise on a handful of them.  Around
the integrator it provides the diagnostics that make degenerate forcing
interesting: the mode-cascade criterion deciding whether noise spreads
to every direction, Malliavin covariance matrices assembled from
tangent/adjoint solves, and ergodicity checks based on long time
averages and projected histograms.
"""

from fewmode.errors import (
    BlowupError,
    ConfigurationError,
    CostGuardError,
    FewmodeError,
    NumericalError,
    UncertifiedModeError,
)
from fewmode.lattice import ForcingSpec, HypoReport, Mode, ModeSet, check_hypoellipticity
from fewmode.spectral import SpectralField, TriadTable, Truncation
from fewmode.dynamics import ModelParams, Scheme, SeedRecord, Stepper, Trajectory, simulate

__version__ = "0.1.0"

__all__ = [
    "BlowupError",
    "ConfigurationError",
    "CostGuardError",
    "FewmodeError",
    "ForcingSpec",
    "HypoReport",
    "Mode",
    "ModeSet",
    "ModelParams",
    "NumericalError",
    "Scheme",
    "SeedRecord",
    "SpectralField",
    "Stepper",
    "Trajectory",
    "TriadTable",
    "Truncation",
    "UncertifiedModeError",
    "check_hypoellipticity",
    "simulate",
    "__version__",
]
