"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: configuration and checkpoint
format problems exit 1, data and I/O problems exit 2, numeric divergence
exits 3.
"""


class FalconfuseError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FalconfuseError):
    """Invalid configuration value or unknown config key."""


class ShapeError(FalconfuseError):
    """Tensor dimensions incompatible with the requested operation."""


class DataError(FalconfuseError):
    """Dataset layout, label, or image decoding problem."""


class CheckpointFormatError(FalconfuseError):
    """Checkpoint file is corrupt, truncated, or from a mismatched config."""


class GradientTapeError(FalconfuseError):
    """Autodiff misuse: non-scalar backward root or a consumed tape."""


class DivergenceError(FalconfuseError):
    """Training produced a non-finite loss."""
