"""Stokes-operator statistics and polarization squeezing of two-mode light."""

from .polcore import (
    Squeezing,
    StokesEstimate,
    TwoModeGaussianState,
    UncertaintyReport,
    build_example,
    coherent_state,
    from_db,
    stokes_linearized,
    stokes_means_vs_phase,
    to_db,
    uncertainty_report,
)

__version__ = "0.1.0"
