"""Regime-stress scores from the ground-state geometry of an error Hamiltonian."""

from .errors import (
    BasisExhaustedError,
    BipartitionError,
    CalibrationError,
    DataFormatError,
    DegenerateGapError,
    HermitianError,
    IllConditionedLoopError,
    InputError,
    InsufficientHistoryError,
    NumericalError,
    QGeoError,
)

__version__ = "0.1.0"

__all__ = [
    "BasisExhaustedError",
    "BipartitionError",
    "CalibrationError",
    "DataFormatError",
    "DegenerateGapError",
    "HermitianError",
    "IllConditionedLoopError",
    "InputError",
    "InsufficientHistoryError",
    "NumericalError",
    "QGeoError",
]
