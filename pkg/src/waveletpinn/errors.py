"""Exception types shared across the library.

ValidationError covers rejected inputs/configuration (CLI exit code 2),
NumericalError covers runtime numerical failures (CLI exit code 3).
"""


class ValidationError(ValueError):
    """Invalid argument, configuration, or schema violation."""


class NumericalError(RuntimeError):
    """Numerical failure during a computation."""


class DivergenceError(NumericalError):
    """An optimizer met a non-finite loss or gradient."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateLossError(NumericalError):
    """Exponent-mode loss hit a zero term whose power rule is singular."""


class EmptySelectionError(NumericalError):
    """Family selection produced an empty active set."""


class InstabilityError(NumericalError):
    """A time-stepping scheme produced non-finite fields."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
