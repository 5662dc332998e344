"""Exception types shared across the library."""


class ReqLensError(Exception):
    """Base class for all library errors."""


class MalformedRecordError(ReqLensError):
    """A wire buffer cannot be decoded into a request record."""


class TraceParseError(ReqLensError):
    """A recognized trace line carries a malformed field."""

    def __init__(self, message: str, line_no: int | None = None, line: str | None = None):
        self.line_no = line_no
        self.line = line
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class CalibrationInconclusive(ReqLensError):
    """A calibration window carried no start-kind events."""


class NoDataError(ReqLensError):
    """A metric was queried before any record arrived."""


class UndefinedRateError(ReqLensError):
    """Request rate is undefined because the stored window spans zero time."""


class NotTracedError(ReqLensError):
    """The pid is not currently traced."""


class DuplicateTargetError(ReqLensError):
    """The pid is already traced."""


class InvalidConfigError(ReqLensError):
    """A simulation or pipeline configuration is infeasible."""


class CapabilityError(ReqLensError):
    """The environment lacks a required capture backend or privilege."""
