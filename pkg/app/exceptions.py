"""
Centralized Exception Handling for ThieleKit.

Provides custom exceptions and the handlers that turn them into error documents and
process exit codes.
"""

import logging
import traceback
from typing import Any, Optional

from pydantic import BaseModel
from pydantic import ValidationError as PydanticValidationError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INTERNAL = 2

# ===== Custom Exceptions =====


class ThieleKitException(Exception):
    """Base exception for all ThieleKit custom exceptions."""

    def __init__(
        self,
        message: str,
        error_code: str = "INTERNAL_ERROR",
        exit_code: int = EXIT_INTERNAL,
        details: Optional[dict[str, Any]] = None,
    ):
        self.message = message
        self.error_code = error_code
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class InputError(ThieleKitException):
    """Raised for malformed input values."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(
            message=message,
            error_code="INPUT_ERROR",
            exit_code=EXIT_INVALID,
            details={"field": field} if field else {},
        )


class SchemaError(ThieleKitException):
    """Raised when a model file does not parse against the documented schema."""

    def __init__(self, path: str, reason: str, line: Optional[int] = None):
        location = f"{path} (line {line})" if line is not None else path
        super().__init__(
            message=f"Schema error at {location}: {reason}",
            error_code="SCHEMA_ERROR",
            exit_code=EXIT_INVALID,
            details={"path": path, "reason": reason, "line": line},
        )


class ModelRejectedError(ThieleKitException):
    """Raised when a loaded model violates the standing assumptions."""

    def __init__(self, violations: list[dict[str, Any]]):
        codes = ", ".join(v.get("assumption", v.get("code", "?")) for v in violations)
        super().__init__(
            message=f"Model rejected: {codes}",
            error_code="MODEL_REJECTED",
            exit_code=EXIT_INVALID,
            details={"violations": violations},
        )


class DomainError(ThieleKitException):
    """Raised when an evaluation leaves the domain where it is defined."""

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(
            message=message,
            error_code="DOMAIN_ERROR",
            exit_code=EXIT_INVALID,
            details=details,
        )


class RegimeError(ThieleKitException):
    """Raised when an operation cannot serve the model's dependence regime."""

    def __init__(self, regime: str, operation: str, hint: Optional[str] = None):
        message = f"{operation} does not support the {regime} regime"
        if hint:
            message = f"{message}; {hint}"
        super().__init__(
            message=message,
            error_code="UNSUPPORTED_REGIME",
            exit_code=EXIT_INVALID,
            details={"regime": regime, "operation": operation},
        )


class PreconditionError(ThieleKitException):
    """Raised when a transform or comparison precondition does not hold."""

    def __init__(
        self,
        operation: str,
        reason: str,
        witness: Optional[dict[str, Any]] = None,
        error_code: str = "PRECONDITION_FAILED",
    ):
        super().__init__(
            message=f"{operation}: {reason}",
            error_code=error_code,
            exit_code=EXIT_INVALID,
            details={"operation": operation, "witness": witness or {}},
        )


class ResetMismatchError(PreconditionError):
    """Raised when two models compared state-wise have different reset points."""

    def __init__(self, operation: str, witness: dict[str, Any]):
        super().__init__(
            operation=operation,
            reason=(
                f"reset points differ at {witness.get('source')}->{witness.get('target')}, "
                f"r={witness.get('time')}"
            ),
            witness=witness,
            error_code="RESET_MISMATCH",
        )


class CoefficientBoundError(ThieleKitException):
    """Raised when a reserve-dependent coefficient violates its bound."""

    def __init__(self, coefficient: str, value: float, bound: str):
        super().__init__(
            message=f"Coefficient {coefficient}={value!r} violates {bound}",
            error_code="COEFFICIENT_BOUND",
            exit_code=EXIT_INVALID,
            details={"coefficient": coefficient, "value": value, "bound": bound},
        )


class InternalError(ThieleKitException):
    """Raised when a numerical routine fails where it should not."""

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(
            message=message,
            error_code="INTERNAL_ERROR",
            exit_code=EXIT_INTERNAL,
            details=details,
        )


class ExportError(ThieleKitException):
    """Raised when report export fails."""

    def __init__(self, format: str, reason: str):
        super().__init__(
            message=f"Failed to export data as {format}: {reason}",
            error_code="EXPORT_FAILED",
            exit_code=EXIT_INTERNAL,
            details={"format": format, "reason": reason},
        )


# ===== Error Response Model =====


class ErrorResponse(BaseModel):
    """Standard error response format."""

    success: bool = False
    error_code: str
    message: str
    details: dict[str, Any] = {}


# ===== Exception Handlers =====

logger = logging.getLogger("thielekit.errors")


def thielekit_exception_handler(exc: ThieleKitException) -> tuple[int, ErrorResponse]:
    """Handle all ThieleKit custom exceptions."""
    return exc.exit_code, ErrorResponse(
        success=False,
        error_code=exc.error_code,
        message=exc.message,
        details=exc.details,
    )


def validation_error_handler(exc: PydanticValidationError) -> tuple[int, ErrorResponse]:
    """Handle pydantic validation failures of domain types as input errors."""
    errors = [
        {"loc": ".".join(str(p) for p in err.get("loc", ())), "msg": err.get("msg", "")}
        for err in exc.errors()
    ]
    return EXIT_INVALID, ErrorResponse(
        success=False,
        error_code="INPUT_ERROR",
        message=f"Invalid input: {errors[0]['loc'] or 'value'}: {errors[0]['msg']}"
        if errors
        else "Invalid input",
        details={"errors": errors},
    )


def generic_exception_handler(exc: Exception) -> tuple[int, ErrorResponse]:
    """Handle unexpected exceptions with a generic error response."""
    logger.error("Unhandled exception:\n%s", traceback.format_exc())
    return EXIT_INTERNAL, ErrorResponse(
        success=False,
        error_code="INTERNAL_ERROR",
        message="An unexpected error occurred",
        details={"type": type(exc).__name__},
    )


def handle_exception(exc: Exception) -> tuple[int, ErrorResponse]:
    """Map any exception to its exit code and error document."""
    if isinstance(exc, ThieleKitException):
        return thielekit_exception_handler(exc)
    if isinstance(exc, PydanticValidationError):
        return validation_error_handler(exc)
    return generic_exception_handler(exc)
