class PudetError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PudetError, ValueError):
    pass


class InvalidBatchError(InvalidInputError):
    pass


class ConfigurationError(PudetError, ValueError):
    pass


class TrainingDivergenceError(PudetError, RuntimeError):
    """Raised when a loss or gradient becomes non-finite.

    ``record`` carries whatever diagnostic the caller had at hand (a step
    record, a gradient summary) so the failure can be reported.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class UndefinedMetricError(PudetError, ValueError):
    pass
