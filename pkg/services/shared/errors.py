"""Error hierarchy shared by every pipeline service.

Each failure the toolkit can report has a machine-readable ErrorCode and a
dedicated PipelineError subclass. PipelineError derives from ValueError so
callers that only care about "bad input" can keep catching ValueError.
"""
from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class ErrorCode(str, Enum):
    """Error code enum for standardized error documents."""

    UNKNOWN_CLASS_NAME = "UNKNOWN_CLASS_NAME"
    MALFORMED_TIMESTAMP = "MALFORMED_TIMESTAMP"
    MALFORMED_LINE = "MALFORMED_LINE"
    CLASS_MISMATCH = "CLASS_MISMATCH"
    DISCONTINUOUS_LOG = "DISCONTINUOUS_LOG"
    EMPTY_LOG = "EMPTY_LOG"
    NO_ROUNDS_FOUND = "NO_ROUNDS_FOUND"
    HORIZON_TOO_SHORT = "HORIZON_TOO_SHORT"
    SHAPE_MISMATCH = "SHAPE_MISMATCH"
    EMPTY_INPUT = "EMPTY_INPUT"
    DEGENERATE_INPUT = "DEGENERATE_INPUT"
    EMPTY_SERIES = "EMPTY_SERIES"
    SERIES_TOO_SHORT = "SERIES_TOO_SHORT"
    WINDOW_TOO_SHORT = "WINDOW_TOO_SHORT"
    RANK_DEFICIENT = "RANK_DEFICIENT"
    DIMENSION_MISMATCH = "DIMENSION_MISMATCH"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"
    EMPTY_BACKGROUND = "EMPTY_BACKGROUND"
    TOO_MANY_FEATURES = "TOO_MANY_FEATURES"
    MISSING_LEXICON_ENTRY = "MISSING_LEXICON_ENTRY"
    UNMAPPED_CLAIM = "UNMAPPED_CLAIM"
    UNKNOWN_TEMPLATE = "UNKNOWN_TEMPLATE"
    ENDPOINT_UNREACHABLE = "ENDPOINT_UNREACHABLE"
    FIXTURE_MISSING = "FIXTURE_MISSING"
    MALFORMED_RESPONSE = "MALFORMED_RESPONSE"
    CONFIG_ERROR = "CONFIG_ERROR"
    INTERNAL_ERROR = "INTERNAL_ERROR"


class PipelineError(ValueError):
    """Base class for every domain error raised by the toolkit.

    Attributes:
        error_code: Machine-readable code
        message: Human-readable message
        detail: Optional extra detail (offending value, counts)
        context: Optional origin such as ``"pred/N03T1.txt:14"``
    """

    error_code: ErrorCode = ErrorCode.INTERNAL_ERROR

    def __init__(
        self,
        message: str,
        *,
        detail: Optional[str] = None,
        context: Optional[str] = None,
    ):
        super().__init__(message)
        self.message = message
        self.detail = detail
        self.context = context

    def with_context(self, context: str) -> "PipelineError":
        """Attach file/line context and return self (for re-raising)."""
        self.context = context
        return self

    def __str__(self) -> str:
        if self.context:
            return f"{self.context}: {self.message}"
        return self.message


# core_model
class UnknownClassName(PipelineError):
    error_code = ErrorCode.UNKNOWN_CLASS_NAME


class MalformedTimestamp(PipelineError):
    error_code = ErrorCode.MALFORMED_TIMESTAMP


# log_parser
class MalformedLine(PipelineError):
    error_code = ErrorCode.MALFORMED_LINE


class ClassMismatch(PipelineError):
    error_code = ErrorCode.CLASS_MISMATCH


class DiscontinuousLog(PipelineError):
    error_code = ErrorCode.DISCONTINUOUS_LOG


class EmptyLog(PipelineError):
    error_code = ErrorCode.EMPTY_LOG


# sequence_validator
class NoRoundsFound(PipelineError):
    error_code = ErrorCode.NO_ROUNDS_FOUND


# metrics
class HorizonTooShort(PipelineError):
    error_code = ErrorCode.HORIZON_TOO_SHORT


class ShapeMismatch(PipelineError):
    error_code = ErrorCode.SHAPE_MISMATCH


class EmptyInput(PipelineError):
    error_code = ErrorCode.EMPTY_INPUT


class DegenerateInput(PipelineError):
    error_code = ErrorCode.DEGENERATE_INPUT


# features
class EmptySeries(PipelineError):
    error_code = ErrorCode.EMPTY_SERIES


class SeriesTooShort(PipelineError):
    error_code = ErrorCode.SERIES_TOO_SHORT


class WindowTooShort(PipelineError):
    error_code = ErrorCode.WINDOW_TOO_SHORT


class RankDeficient(PipelineError):
    error_code = ErrorCode.RANK_DEFICIENT


class DimensionMismatch(PipelineError):
    error_code = ErrorCode.DIMENSION_MISMATCH


# anomaly
class InsufficientData(PipelineError):
    error_code = ErrorCode.INSUFFICIENT_DATA


class EmptyBackground(PipelineError):
    error_code = ErrorCode.EMPTY_BACKGROUND


class TooManyFeatures(PipelineError):
    error_code = ErrorCode.TOO_MANY_FEATURES


# feedback
class MissingLexiconEntry(PipelineError):
    error_code = ErrorCode.MISSING_LEXICON_ENTRY


class UnmappedClaim(PipelineError):
    error_code = ErrorCode.UNMAPPED_CLAIM


class PromptAssemblyWarning(UserWarning):
    """Prompt was emitted from degenerate input (e.g. empty attribution summary)."""


# llm_gateway
class UnknownTemplate(PipelineError):
    error_code = ErrorCode.UNKNOWN_TEMPLATE


class EndpointUnreachable(PipelineError):
    error_code = ErrorCode.ENDPOINT_UNREACHABLE


class FixtureMissing(PipelineError):
    error_code = ErrorCode.FIXTURE_MISSING


class MalformedResponse(PipelineError):
    error_code = ErrorCode.MALFORMED_RESPONSE


# cli
class ConfigError(PipelineError):
    error_code = ErrorCode.CONFIG_ERROR


class ErrorResponse(BaseModel):
    """Standardized error document printed by the CLI."""

    error_code: ErrorCode = Field(..., description="Machine-readable error code")
    message: str = Field(..., description="Human-readable error message")
    detail: Optional[str] = Field(None, description="Additional error details")
    context: Optional[str] = Field(None, description="File/line the error originated from")
    timestamp: datetime = Field(
        default_factory=lambda: datetime.now(tz=timezone.utc), description="Error timestamp"
    )

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "error_code": "DISCONTINUOUS_LOG",
                "message": "Gap of 1.000 s between interval 0 and interval 1",
                "detail": "stop=40.0 start=41.0",
                "context": "pred/N03T1.txt",
                "timestamp": "2025-01-15T10:30:00Z",
            }
        }
    )

    @classmethod
    def from_exception(cls, exc: Exception) -> "ErrorResponse":
        """Build an error document from any exception."""
        if isinstance(exc, PipelineError):
            return cls(
                error_code=exc.error_code,
                message=exc.message,
                detail=exc.detail,
                context=exc.context,
            )
        return cls(error_code=ErrorCode.INTERNAL_ERROR, message=str(exc) or type(exc).__name__)
