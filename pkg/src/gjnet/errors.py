"""Exception types shared across the package."""


class GJNetError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GJNetError, ValueError):
    """Malformed argument: wrong shape, negative probability, bad config."""


class ModelError(GJNetError):
    """A network specification violates a model assumption."""


class SolverError(GJNetError):
    """A numerical solve failed to reach its target accuracy.

    Carries a ``diagnostics`` dict with residuals and iteration counts.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UnsupportedError(GJNetError):
    """Requested operation is outside the supported problem range."""
