class BartlabError(Exception):
    """Base class for library errors."""


class ConfigError(BartlabError, ValueError):
    """Invalid parameters or configuration values."""


class IngestionError(BartlabError, ValueError):
    """A data file could not be parsed."""


class CapacityError(BartlabError, RuntimeError):
    """An enumeration or dense matrix exceeded its configured size cap."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class NumericalError(BartlabError, ArithmeticError):
    """A factorization or linear solve failed."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ReducibleChainError(BartlabError, ValueError):
    """A Markov chain is not irreducible (or cannot reach a target set)."""

    def __init__(self, message, states=()):
        super().__init__(message)
        self.states = tuple(states)


class InfeasibleError(BartlabError, ValueError):
    """No state in an enumerated space satisfies the requested condition."""


class DiagnosticError(BartlabError, ValueError):
    """A diagnostic is undefined for the supplied samples."""
