"""Exception hierarchy with stable machine-readable error categories.

Every error carries a ``code`` string suitable for scripting against the
CLI's stderr output.
"""

from __future__ import annotations


class BurnsegError(Exception):
    """Base class for all burnseg errors."""

    code: str = "ERROR"


class NoOverlapError(BurnsegError):
    code = "NO_OVERLAP"


class CrsMismatchError(BurnsegError):
    code = "CRS_MISMATCH"


class GridMismatchError(BurnsegError):
    code = "GRID_MISMATCH"


class UnknownCodeError(BurnsegError):
    code = "UNKNOWN_CODE"


class RasterIOError(BurnsegError):
    code = "IO_ERROR"


class UnsupportedFormatError(BurnsegError):
    code = "UNSUPPORTED_FORMAT"


class EmptySetError(BurnsegError):
    code = "EMPTY_SET"


class EmptyAoiError(BurnsegError):
    code = "EMPTY_AOI"


class BadFractionsError(BurnsegError):
    code = "BAD_FRACTIONS"


class BadConfigError(BurnsegError):
    code = "BAD_CONFIG"


class ShapeError(BurnsegError):
    code = "SHAPE_ERROR"


class NonFiniteInputError(BurnsegError):
    code = "NONFINITE_INPUT"


class NoLcHeadError(BurnsegError):
    code = "NO_LC_HEAD"


class MissingLcError(BurnsegError):
    code = "MISSING_LC"


class NanLossError(BurnsegError):
    code = "NAN_LOSS"


class EmptyDatasetError(BurnsegError):
    code = "EMPTY_DATASET"


class UnknownTransformError(BurnsegError):
    code = "UNKNOWN_TRANSFORM"


class NonSquareError(BurnsegError):
    code = "NON_SQUARE"
