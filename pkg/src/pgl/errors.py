"""Exception types shared across the package."""


class PglError(Exception):
    """Base class for all package errors."""


class ShapeError(PglError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(PglError, ValueError):
    """Input values fall outside an operation's numeric domain (e.g. log of <= 0)."""


class ContractError(PglError, RuntimeError):
    """An API precondition was violated (e.g. backward from a non-scalar)."""


class DataError(PglError, ValueError):
    """Dataset contents are inconsistent (labels out of range, length mismatch)."""


class FormatError(PglError, ValueError):
    """A file does not match its declared binary format."""


class ConfigError(PglError, ValueError):
    """A run configuration is missing, malformed, or violates an invariant."""


class CheckpointError(PglError, ValueError):
    """A checkpoint file is corrupt or has the wrong version."""
