"""Exception taxonomy shared across the package."""


class PvmError(Exception):
    """Base class for all package errors."""


class ConfigError(PvmError):
    """Invalid or inconsistent configuration."""


class TopologyError(PvmError):
    """Layer grids that cannot be wired under the fan-in rules."""


class ContractError(PvmError):
    """An operation was called with data violating its contract."""


class ProtocolError(PvmError):
    """Predict/train phase ordering was violated."""


class CheckpointError(PvmError):
    """Unreadable, truncated, or inconsistent checkpoint data."""


class DatasetError(PvmError):
    """Malformed sequence directory, label file, or frame data."""
