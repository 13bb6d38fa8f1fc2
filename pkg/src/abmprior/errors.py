"""Exception types shared across the package."""


class DimensionError(ValueError):
    """An array did not have the shape the receiving function expects."""


class NonFiniteError(FloatingPointError):
    """A loss, gradient or parameter became NaN or infinite."""


class DatasetFormatError(ValueError):
    """A dataset file is malformed or inconsistent with its header."""
