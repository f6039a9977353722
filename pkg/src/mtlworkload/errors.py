"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its valid range."""


class SchemaError(ValueError):
    """Input columns do not match the declared schema."""


class DataError(ValueError):
    """Input data cannot be used (empty after cleaning, wrong shape, ...)."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


class UnknownTaskError(KeyError):
    """Prediction requested for a task the model was not trained on."""

    def __init__(self, task):
        super().__init__(task)
        self.task = task

    def __str__(self):
        return f"unknown task {self.task!r}: model was not trained on it"


class NumericError(RuntimeError):
    """A solver produced a non-finite value.

    The partial fit trace is kept on ``trace`` for diagnosis.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
