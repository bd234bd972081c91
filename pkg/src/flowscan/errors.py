"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: ConfigurationError -> 2, NumericalError
(and subclasses) -> 3.
"""


class FlowscanError(Exception):
    """Base class for all package errors."""


class RejectedInputError(FlowscanError, ValueError):
    """An argument violates a documented precondition (shape, range, order)."""


class ConfigurationError(FlowscanError):
    """Invalid or inconsistent experiment configuration."""


class NumericalError(FlowscanError):
    """A numerical routine failed beyond recoverable tolerance; carries a
    diagnostics dict naming the offending quantities."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ModelStateError(NumericalError):
    """Model parameters violate a structural invariant (e.g. flow invertibility)."""


class TrainingError(NumericalError):
    """Training produced non-finite quantities."""
