"""Exception types shared across the package."""


class NumericalFailure(ArithmeticError):
    """A computation produced a non-finite value.

    ``trial_index`` is set when the failure happened inside a Monte Carlo
    trial, so the offending stream can be replayed.
    """

    def __init__(self, message, trial_index=None):
        super().__init__(message)
        self.trial_index = trial_index


class FormatError(ValueError):
    """A binary container violated its declared format (bad magic, bad counts)."""


class UnsupportedActivation(ValueError):
    """The requested operation is not defined for this activation."""


class NoViableStepSize(RuntimeError):
    """Every candidate step size diverged during tuning."""


class InfeasibleBudget(ValueError):
    """A parameter budget too small to realize any width >= 1."""
