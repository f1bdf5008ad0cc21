"""Exception types shared across the package."""


class MagsimError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(MagsimError):
    """Operand shapes are incompatible for the requested operation."""


class TapeError(MagsimError):
    """Gradient tape misuse (double backward, norms before backward, ...)."""


class ContractError(MagsimError):
    """A documented precondition was violated (e.g. unnormalized adjacency)."""


class DatasetError(MagsimError):
    """On-disk dataset is malformed or inconsistent."""


class ConfigError(MagsimError):
    """Run configuration is invalid (unknown key, bad value)."""
