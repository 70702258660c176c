"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor extents are inconsistent with what an operation requires."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid range."""


class ConfigError(ValueError):
    """A model or training configuration violates its invariants."""


class NonFiniteError(ArithmeticError):
    """A computation produced NaN or Inf where finiteness is guaranteed."""
