class ConfigurationError(ValueError):
    """A configuration value or data precondition is invalid.

    ``key`` names the offending setting when one applies.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class TrainingError(RuntimeError):
    """Optimization produced a non-finite loss or metric."""


class UsageError(ValueError):
    """An API was called with arguments outside its contract."""
