class IntentCacheError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(IntentCacheError):
    pass


class ParseError(IntentCacheError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetricError(IntentCacheError, ValueError):
    """A metric or score is mathematically undefined for the given input."""


class TrainingError(IntentCacheError, RuntimeError):
    pass
