"""Exception and warning types raised across the package."""


class DimensionMismatch(ValueError):
    """Array shapes disagree (class count, sample count, parameter block size)."""


class NonFiniteError(FloatingPointError):
    """The solver objective became NaN or infinite."""


class DegenerateInputError(ValueError):
    """The calibration problem has no finite optimum."""


class SeparableDataWarning(UserWarning):
    """Binary fit hit the parameter-norm cap because the data is separable."""


class RenormalizedWarning(UserWarning):
    """Probability rows did not sum to one and were renormalized."""
