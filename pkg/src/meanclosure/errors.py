"""Exception types shared across the package."""


class MeanClosureError(Exception):
    """Base class for all package errors."""


class EmptyInput(MeanClosureError):
    """Raised when a score vector or input file contains no values."""


class InvalidScore(MeanClosureError):
    """Raised for a NaN, negative or >1 p-value; carries the offending index."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"invalid p-value at index {index}: {value!r}")


class InvalidSize(MeanClosureError):
    """Raised when a size argument is not a positive integer."""


class InvalidLevel(MeanClosureError):
    """Raised when alpha is outside (0, 1)."""


class InvalidGamma(MeanClosureError):
    """Raised when the FDP target gamma is outside [0, 1)."""


class UnsupportedInverse(MeanClosureError):
    """Raised when an adjusted p-value is requested from a backend without
    a closed-form inverse in alpha (the empirical table backend)."""


class Unsupported(MeanClosureError):
    """Raised for parameter branches with no closed form (use Monte Carlo)."""


class Divergent(MeanClosureError):
    """Raised when a conditional moment does not exist for the parameters."""


class OutOfRange(MeanClosureError):
    """Raised when an inverse is requested at a target outside the range."""


class OracleTooLarge(MeanClosureError):
    """Raised when the brute-force oracle is asked for more than 15 hypotheses."""
