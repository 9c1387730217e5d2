"""Exception hierarchy. The CLI maps these onto exit codes."""


class OvertakeError(Exception):
    """Base class for all errors raised by this package."""


class InputError(OvertakeError, ValueError):
    """Malformed user input: config files, grids, horizons, policy specs."""


class ModelError(OvertakeError):
    """A coefficient function raised or returned non-finite values."""


class ModelValidationError(ModelError):
    """Declared partials or linearity flags disagree with finite differences."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PreconditionError(OvertakeError):
    """An operation was called outside its domain (e.g. explicit solver with f_x != 0)."""


class LatticeMismatchError(OvertakeError, ValueError):
    """Ensembles or adjoints built on different Brownian lattices were combined."""


class NumericalError(OvertakeError, ArithmeticError):
    """State blow-up, rank-deficient regressions and similar numerical failures."""
