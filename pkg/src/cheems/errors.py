"""Exception types shared across the package."""


class CheemsError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CheemsError, ValueError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(CheemsError, ValueError):
    """Invalid layer/model/run configuration."""


class RangeError(CheemsError, ValueError):
    """Index or position outside a precomputed table or valid interval."""


class ContractError(CheemsError, RuntimeError):
    """An operation's precondition was violated by the caller."""


class NonFiniteError(CheemsError, FloatingPointError):
    """A forward op produced NaN/Inf from finite inputs, or a gradient went non-finite."""


class InputError(CheemsError, ValueError):
    """Invalid runtime input data (e.g. token id out of vocabulary)."""
