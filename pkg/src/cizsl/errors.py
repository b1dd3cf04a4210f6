"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration / input / format problems
exit with 1, runtime numerical failures exit with 2.
"""


class CizslError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CizslError):
    """An operation received arguments violating its preconditions."""


class InvalidConfigError(CizslError):
    """A configuration object or file is inconsistent."""


class InvalidStateError(CizslError):
    """An operation was called with stale or mismatched internal state."""


class InvalidSplitError(CizslError):
    """A requested train/validation split cannot be built."""


class DatasetFormatError(CizslError):
    """An on-disk dataset manifest or blob failed validation."""


class DivergenceUndefinedError(CizslError):
    """The requested divergence is undefined for the given distributions."""


class OracleFailureError(CizslError):
    """A numerical test oracle (finite differences) hit a non-finite value."""


class TrainingDivergedError(CizslError):
    """Training produced non-finite losses; carries the failing iteration."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration
