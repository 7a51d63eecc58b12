"""Exception types shared across the package."""


class PadainLabError(Exception):
    pass


class DimensionError(PadainLabError, ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class UsageError(PadainLabError, RuntimeError):
    pass


class InputError(PadainLabError, ValueError):
    pass


class CheckInvalidError(PadainLabError, RuntimeError):
    """The function handed to the gradient checker is not deterministic."""


class ConfigError(PadainLabError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class IngestionError(PadainLabError, IOError):
    pass


class NonFiniteError(PadainLabError, FloatingPointError):
    pass


class DatasetMissingError(IngestionError):
    pass
