"""Exception types shared across the package."""


class HDGCNError(Exception):
    """Base class for all library errors."""


class DimensionError(HDGCNError, ValueError):
    pass


class ConfigError(HDGCNError, ValueError):
    pass


class DataError(HDGCNError, ValueError):
    pass


class UsageError(HDGCNError, RuntimeError):
    pass


class CapabilityError(HDGCNError, RuntimeError):
    """The request exceeds a size guard of a dense routine."""


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class CheckpointError(HDGCNError, ValueError):
    pass
