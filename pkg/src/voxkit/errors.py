"""Exception types shared across the toolkit."""


class VoxkitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(VoxkitError):
    """Tensor shapes violate an operation's geometry contract."""


class NumericError(VoxkitError):
    """A kernel produced a non-finite value (overflow, NaN)."""


class ContractError(VoxkitError):
    """A caller violated an operation precondition."""


class StateError(VoxkitError):
    """Operation invoked in an invalid state (e.g. backward without forward)."""


class InputLengthError(VoxkitError):
    """Audio or feature input too short for the requested operation."""


class FormatError(VoxkitError):
    """A file or record does not match its documented format."""


class ConfigError(VoxkitError):
    """Configuration key/value rejected."""


class CheckpointError(VoxkitError):
    """Checkpoint file invalid or incompatible with the current config."""


class TrainingError(VoxkitError):
    """Training diverged or produced non-finite gradients."""
