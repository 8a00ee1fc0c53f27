"""Error types shared across the package."""


class TransportLabError(Exception):
    """Base class for package errors."""


class CertificateConflictError(TransportLabError):
    """A probed value contradicts a declared convexity constant."""


class AccuracyError(TransportLabError):
    """A quadrature or Monte Carlo error estimate exceeds tolerance."""

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class ConvergenceError(TransportLabError):
    """An iterative solver did not converge within its budget."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DomainError(TransportLabError):
    """Input outside the validity region of a formula or solver."""


class SupportError(TransportLabError):
    """A density or map was used outside its declared support."""


class ConvexityViolationError(TransportLabError):
    """A transport Jacobian lost positivity where it must not."""

    def __init__(self, message, probe=None):
        super().__init__(message)
        self.probe = probe


class FitError(TransportLabError):
    """A local regression was too ill-conditioned to trust."""
