"""Exception types shared across the package."""


class DendConvError(Exception):
    """Base class for all package errors."""


class DimensionError(DendConvError, ValueError):
    """A tensor or patch matrix has an incompatible shape."""


class NumericRangeError(DendConvError, ArithmeticError):
    """A forward pass produced NaN or Inf."""


class StateError(DendConvError, RuntimeError):
    """An operation was called with a missing or mismatched cache/state."""


class InputError(DendConvError, ValueError):
    """Invalid user-supplied value (labels, boxes, configs, datasets)."""


class BuildError(DendConvError, ValueError):
    """A model specification does not compose."""
