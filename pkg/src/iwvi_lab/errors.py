"""Exception types raised across the package."""


class IWVILabError(Exception):
    """Base class for all package errors."""


class NonConvergence(IWVILabError):
    """Adaptive quadrature ran out of budget before meeting its tolerance."""


class DimensionMismatch(IWVILabError, ValueError):
    pass


class BudgetExceeded(IWVILabError):
    """Optimizer hit max_iter before reaching its tolerance."""


class NonFiniteObjective(IWVILabError, FloatingPointError):
    pass


class EmptyDataset(IWVILabError, ValueError):
    pass


class BoundaryTooClose(IWVILabError, ValueError):
    """Finite-difference stencil would leave the parameter box."""


class SingularJ2(IWVILabError, ArithmeticError):
    """Mean Hessian is too ill-conditioned to invert."""


class MarginalUnavailable(IWVILabError):
    """Operation needs an exact marginal likelihood the model does not expose."""
