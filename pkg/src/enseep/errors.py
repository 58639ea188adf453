"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1,
BundleIOError / OSError -> 2, InvariantViolation -> 3.
"""


class ValidationError(ValueError):
    """Input data violates a documented contract (bad dimensions, bad
    probabilities, unknown ids, degenerate statistics)."""


class DegenerateInputError(ValidationError):
    """A statistic is undefined for this input (e.g. constant vectors)."""


class BundleIOError(OSError):
    """A bundle, raster, or table file is missing or unreadable."""


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
