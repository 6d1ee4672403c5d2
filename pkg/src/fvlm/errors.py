"""Exception types shared across the toolkit."""


class FvlmError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FvlmError, ValueError):
    """Operands have incompatible dimensions."""


class ValidationError(FvlmError, ValueError):
    """Input data violates a documented precondition."""


class ConfigError(FvlmError, ValueError):
    """Inconsistent or unknown configuration."""


class TrainingError(FvlmError, RuntimeError):
    """Training diverged or produced non-finite values."""


class CheckpointError(FvlmError, RuntimeError):
    """Checkpoint file is unreadable, corrupt, or of the wrong kind."""


class FormatError(FvlmError, ValueError):
    """An external data file does not match its wire format."""
