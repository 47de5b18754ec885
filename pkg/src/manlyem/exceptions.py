"""Exception hierarchy for manlyem."""


class ManlyError(Exception):
    """Base class for all package errors."""


class ManlyOverflowError(ManlyError, OverflowError):
    """exp(lambda * x) left the representable range."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ManlyDomainError(ManlyError, ValueError):
    """Inverse transform requested where y * lambda + 1 <= 0."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class FactorizationError(ManlyError, ValueError):
    """A covariance matrix is not positive definite."""


class DegeneratePointError(ManlyError, ValueError):
    """Every component assigns zero density to an observation."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class EmptyComponentError(ManlyError, ValueError):
    """A component's effective sample size fell below the minimum."""

    def __init__(self, message, component=None, iteration=None):
        super().__init__(message)
        self.component = component
        self.iteration = iteration


class InitError(ManlyError, ValueError):
    """Hard-assignment initialization could not produce G clusters."""


class InvalidStartError(ManlyError, ValueError):
    """Objective is not finite at the optimizer's starting point."""


class DivergenceError(ManlyError, ArithmeticError):
    """Observed log-likelihood became non-finite during fitting."""


class InfeasibleSchemeError(ManlyError, ValueError):
    """Rejection sampler acceptance rate fell below the floor."""
