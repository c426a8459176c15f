"""
Structured exception handling for the MLRTG numerical engines.
Provides consistent error envelopes with operation metadata and exception details.
"""
import traceback
import time
from typing import Dict, Any, Optional, Tuple
from dataclasses import dataclass, asdict


@dataclass
class OperationContext:
    """Metadata for the operation that raised."""
    operation: str
    mode: Optional[int] = None
    shape: Optional[Tuple[int, ...]] = None
    detail: Optional[str] = None
    timestamp: Optional[float] = None

    def __post_init__(self):
        if self.timestamp is None:
            self.timestamp = time.time()
        if self.shape is not None:
            self.shape = tuple(int(s) for s in self.shape)


@dataclass
class ErrorEnvelope:
    """Consistent error envelope with operation metadata and exception details."""
    context: OperationContext
    exception_type: str
    exception_message: str
    stacktrace: str
    timestamp: float
    exit_code: int
    severity: str = "error"  # error, warning, critical

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for logging/serialization."""
        ctx = asdict(self.context)
        if ctx.get("shape") is not None:
            ctx["shape"] = list(ctx["shape"])
        return {
            "context": ctx,
            "exception_type": self.exception_type,
            "exception_message": self.exception_message,
            "stacktrace": self.stacktrace,
            "timestamp": self.timestamp,
            "exit_code": self.exit_code,
            "severity": self.severity,
        }


class MLRTGError(Exception):
    """Base exception for every library error."""
    exit_code = 1

    def __init__(self, message: str, context: Optional[OperationContext] = None):
        super().__init__(message)
        self.context = context


class UsageError(MLRTGError):
    """Invalid command-line flags or configuration keys."""
    exit_code = 2


class InvalidMode(MLRTGError):
    """Mode index outside 1..d."""
    exit_code = 2


class ShapeError(MLRTGError):
    """Inconsistent dimensions between operands."""
    exit_code = 2


class TooFewPoints(MLRTGError):
    """Not enough vertices for the requested neighbor count."""
    exit_code = 2


class RankError(MLRTGError):
    """Requested rank or basis size exceeds the available dimension."""
    exit_code = 2


class TensorIOError(MLRTGError):
    """Reading or writing a tensor/matrix file failed."""
    exit_code = 3

    def __init__(self, message: str, path: Optional[str] = None, context: Optional[OperationContext] = None):
        super().__init__(f"{message} [{path}]" if path else message, context)
        self.path = path


class ManifestError(MLRTGError):
    """A run manifest does not match its schema."""
    exit_code = 3


class NumericError(MLRTGError):
    """Non-finite values or a numerically undefined quantity."""
    exit_code = 4


class ZeroInput(NumericError):
    """An operand that must be nonzero is identically zero."""


class NotOrthonormal(NumericError):
    """A basis expected to have orthonormal columns does not."""


def create_error_envelope(exception: Exception, context: OperationContext, severity: str = "error") -> ErrorEnvelope:
    """Create a structured error envelope from an exception."""
    return ErrorEnvelope(
        context=getattr(exception, "context", None) or context,
        exception_type=type(exception).__name__,
        exception_message=str(exception),
        stacktrace=traceback.format_exc(),
        timestamp=time.time(),
        exit_code=getattr(exception, "exit_code", 1),
        severity=severity,
    )


def safe_execute_with_context(func, context: OperationContext, *args, **kwargs):
    """
    Execute a function with error handling and context capture.
    Returns (result, error_envelope) tuple.
    """
    try:
        result = func(*args, **kwargs)
        return result, None
    except MLRTGError as e:
        error_envelope = create_error_envelope(e, context)
        return None, error_envelope
