"""Exception hierarchy shared across the package."""


class MiaBenchError(Exception):
    """Base class for all errors raised by mia_bench."""


class InvalidParameterError(MiaBenchError, ValueError):
    """A hyperparameter or size argument is outside its allowed range."""


class InvalidInputError(MiaBenchError, ValueError):
    """Array input has the wrong shape or contains non-finite values."""


class InvalidLabelError(InvalidInputError):
    """A class index is outside ``[0, k)``."""


class DivergenceUndefinedError(MiaBenchError, ValueError):
    """KL divergence requested where ``p_i > 0`` but ``q_i == 0``."""


class DegenerateLabelsError(MiaBenchError, ValueError):
    """Binary training data contains only one class."""


class TrainingDivergedError(MiaBenchError, RuntimeError):
    """Loss became NaN or infinite during SGD."""


class ConfigurationError(MiaBenchError, ValueError):
    """An experiment configuration is inconsistent or cannot be parsed.

    ``key`` names the offending config entry when one can be identified.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class SchemaError(MiaBenchError, ValueError):
    """A data file is well-formed text but violates the record schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(SchemaError):
    """A data file row cannot be parsed at all."""
