"""Exception types shared across the package."""


class ForgeError(Exception):
    """Base class for all vqforge errors."""


class ShapeError(ForgeError, ValueError):
    """Tensor shape incompatible with a config (indivisible, mismatched)."""


class ConfigError(ForgeError, ValueError):
    """Invalid or inconsistent configuration value."""


class CodeRangeError(ForgeError, ValueError):
    """A code in the stream indexes past the end of its codebook."""


class CapacityError(ForgeError, RuntimeError):
    """A plan exceeds the modeled hardware capacity."""


class MappingError(ForgeError, ValueError):
    """A layout pair cannot be served by intra-warp register exchange."""
