"""Simulated-likelihood estimation lab: IWVI, MSLE and exact MLE for latent-variable models."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BoundaryTooClose,
    BudgetExceeded,
    DimensionMismatch,
    EmptyDataset,
    IWVILabError,
    MarginalUnavailable,
    NonConvergence,
    NonFiniteObjective,
    SingularJ2,
)
from .rng import SeedSpec, split  # noqa: E402

__all__ = [
    "__version__",
    "SeedSpec",
    "split",
    "IWVILabError",
    "NonConvergence",
    "DimensionMismatch",
    "BudgetExceeded",
    "NonFiniteObjective",
    "EmptyDataset",
    "BoundaryTooClose",
    "SingularJ2",
    "MarginalUnavailable",
]
