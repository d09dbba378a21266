"""Exception hierarchy.

Input problems (bad shapes, malformed files, impossible configurations) derive
from :class:`InputError`; numerical breakdowns (degenerate gaps, ill-conditioned
loops, failed calibration) derive from :class:`NumericalError`.  The CLI maps
the two families to exit codes 1 and 2.
"""


class QGeoError(Exception):
    """Base class for all package errors."""


class InputError(QGeoError, ValueError):
    pass


class NumericalError(QGeoError, ArithmeticError):
    pass


class HermitianError(InputError):
    """Matrix fails the conjugate-symmetry check."""


class BipartitionError(InputError):
    pass


class BasisExhaustedError(InputError):
    pass


class InsufficientHistoryError(InputError):
    pass


class DataFormatError(InputError):
    pass


class DegenerateGapError(NumericalError):
    pass


class IllConditionedLoopError(NumericalError):
    pass


class CalibrationError(NumericalError):
    pass
