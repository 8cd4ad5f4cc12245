#!/usr/bin/env python3
"""
Error Handling and Categorization for spoof cue training and evaluation.

Features:
- Structured error categorization
- Exception hierarchy per failure domain (manifest, protocol, checkpoint, numerics, ...)
- Library error mapping (OSError, pydantic, torch shape errors)
- Detailed logging with context
"""

import functools
import logging
import time
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

logger = logging.getLogger(__name__)


class ErrorCategory(Enum):
    """Error categories for structured error handling"""
    MANIFEST = "manifest"
    PROTOCOL = "protocol"
    CONFIGURATION = "configuration"
    CHECKPOINT = "checkpoint"
    SHAPE = "shape"
    NUMERICAL = "numerical"
    DATA_IO = "data_io"
    METRICS = "metrics"
    VALIDATION = "validation"
    SYSTEM = "system"
    UNKNOWN = "unknown"


class ErrorSeverity(Enum):
    """Error severity levels"""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


@dataclass
class ErrorContext:
    """Structured error context information"""
    timestamp: datetime
    category: ErrorCategory
    severity: ErrorSeverity
    error_code: Optional[str] = None
    message: str = ""
    details: Dict[str, Any] = field(default_factory=dict)
    operation: Optional[str] = None
    duration_ms: Optional[float] = None
    recoverable: bool = True


class SpoofCueException(Exception):
    """Base exception class for spoof cue framework operations"""

    def __init__(
        self,
        message: str,
        category: ErrorCategory = ErrorCategory.UNKNOWN,
        severity: ErrorSeverity = ErrorSeverity.MEDIUM,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
        recoverable: bool = True
    ):
        super().__init__(message)
        self.context = ErrorContext(
            timestamp=datetime.now(),
            category=category,
            severity=severity,
            error_code=error_code,
            message=message,
            details=details or {},
            recoverable=recoverable
        )

    @property
    def details(self) -> Dict[str, Any]:
        return self.context.details


class ManifestError(SpoofCueException):
    """Manifest parse errors and sample invariant violations"""

    def __init__(self, message: str, line_number: Optional[int] = None, **kwargs):
        details = kwargs.pop("details", None) or {}
        if line_number is not None:
            details["line_number"] = line_number
            message = f"line {line_number}: {message}"
        super().__init__(
            message,
            category=ErrorCategory.MANIFEST,
            severity=ErrorSeverity.HIGH,
            recoverable=False,
            details=details,
            **kwargs
        )
        self.line_number = line_number


class LabelConflictError(ManifestError):
    """Sample whose label and attack type disagree"""


class ProtocolError(SpoofCueException):
    """Evaluation protocol resolution errors"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.PROTOCOL,
            severity=ErrorSeverity.HIGH,
            recoverable=False,
            **kwargs
        )


class ConfigurationError(SpoofCueException):
    """Configuration related errors"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.CONFIGURATION,
            severity=ErrorSeverity.CRITICAL,
            recoverable=False,
            **kwargs
        )


class CheckpointError(SpoofCueException):
    """Checkpoint and pretrained-weight loading errors"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.CHECKPOINT,
            severity=ErrorSeverity.HIGH,
            recoverable=False,
            **kwargs
        )


class ShapeError(SpoofCueException):
    """Tensor shape contract violations"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.SHAPE,
            severity=ErrorSeverity.MEDIUM,
            **kwargs
        )


class NonFiniteLossError(SpoofCueException):
    """A training loss component became NaN or infinite"""

    def __init__(self, message: str, components: Optional[Dict[str, Any]] = None, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.NUMERICAL,
            severity=ErrorSeverity.CRITICAL,
            recoverable=False,
            details={"components": components or {}},
            **kwargs
        )


class DatasetIOError(SpoofCueException):
    """Image and dataset file I/O errors"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.DATA_IO,
            severity=ErrorSeverity.HIGH,
            **kwargs
        )


class MetricsError(SpoofCueException):
    """Metric preconditions not met (missing class, bad PAI tags)"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.METRICS,
            severity=ErrorSeverity.MEDIUM,
            **kwargs
        )


class InputValidationError(SpoofCueException):
    """Invalid argument values passed to an operation"""

    def __init__(self, message: str, **kwargs):
        super().__init__(
            message,
            category=ErrorCategory.VALIDATION,
            severity=ErrorSeverity.MEDIUM,
            **kwargs
        )


class ErrorHandler:
    """Centralized error handling with categorization and history"""

    def __init__(self, enable_metrics: bool = True):
        self.enable_metrics = enable_metrics
        self.error_counts: Dict[ErrorCategory, int] = {}
        self.error_history: List[ErrorContext] = []
        self.max_history_size = 1000

    def handle_exception(
        self,
        exception: Exception,
        operation: Optional[str] = None,
        duration_ms: Optional[float] = None
    ) -> ErrorContext:
        """
        Handle and categorize exceptions with structured logging
        """
        error_context = self._categorize_exception(exception, operation, duration_ms)

        self._log_error(error_context)

        if self.enable_metrics:
            self._update_metrics(error_context)

        self._store_error_history(error_context)

        return error_context

    def _categorize_exception(
        self,
        exception: Exception,
        operation: Optional[str] = None,
        duration_ms: Optional[float] = None
    ) -> ErrorContext:
        """Categorize exception and create error context"""

        if isinstance(exception, SpoofCueException):
            exception.context.operation = operation
            exception.context.duration_ms = duration_ms
            return exception.context

        # pydantic's ValidationError subclasses ValueError, check it first
        if isinstance(exception, ValidationError):
            category = ErrorCategory.CONFIGURATION
            severity = ErrorSeverity.CRITICAL
        elif isinstance(exception, OSError):
            category = ErrorCategory.DATA_IO
            severity = ErrorSeverity.HIGH
        elif isinstance(exception, (ValueError, TypeError)):
            category = ErrorCategory.VALIDATION
            severity = ErrorSeverity.MEDIUM
        elif isinstance(exception, RuntimeError) and (
            "size" in str(exception).lower() or "shape" in str(exception).lower()
        ):
            category = ErrorCategory.SHAPE
            severity = ErrorSeverity.MEDIUM
        else:
            category = ErrorCategory.UNKNOWN
            severity = ErrorSeverity.HIGH

        return ErrorContext(
            timestamp=datetime.now(),
            category=category,
            severity=severity,
            error_code=None,
            message=str(exception),
            details={
                "original_error": type(exception).__name__,
                "traceback": traceback.format_exc()
            },
            operation=operation,
            duration_ms=duration_ms,
            recoverable=category not in (ErrorCategory.CONFIGURATION, ErrorCategory.UNKNOWN)
        )

    def _log_error(self, error_context: ErrorContext):
        """Log error with appropriate level and structured information"""

        log_data = {
            "category": error_context.category.value,
            "severity": error_context.severity.value,
            "operation": error_context.operation,
            "error_code": error_context.error_code,
            "duration_ms": error_context.duration_ms,
            "recoverable": error_context.recoverable
        }

        if error_context.severity == ErrorSeverity.CRITICAL:
            logger.critical(f"{error_context.message} | {log_data}")
        elif error_context.severity == ErrorSeverity.HIGH:
            logger.error(f"{error_context.message} | {log_data}")
        elif error_context.severity == ErrorSeverity.MEDIUM:
            logger.warning(f"{error_context.message} | {log_data}")
        else:
            logger.info(f"{error_context.message} | {log_data}")

    def _update_metrics(self, error_context: ErrorContext):
        category = error_context.category
        self.error_counts[category] = self.error_counts.get(category, 0) + 1

    def _store_error_history(self, error_context: ErrorContext):
        """Store error in history with size limit"""
        self.error_history.append(error_context)
        if len(self.error_history) > self.max_history_size:
            self.error_history.pop(0)

    def get_error_summary(self) -> Dict[str, Any]:
        """Get error summary for monitoring"""
        return {
            "total_errors": len(self.error_history),
            "error_counts_by_category": {
                category.value: count
                for category, count in self.error_counts.items()
            },
            "recent_errors": [
                {
                    "timestamp": ctx.timestamp.isoformat(),
                    "category": ctx.category.value,
                    "severity": ctx.severity.value,
                    "message": ctx.message,
                    "operation": ctx.operation
                }
                for ctx in self.error_history[-10:]
            ]
        }


# Global error handler instance
global_error_handler = ErrorHandler()


def handle_error(
    exception: Exception,
    operation: Optional[str] = None,
    duration_ms: Optional[float] = None
) -> ErrorContext:
    """Convenience function for global error handling"""
    return global_error_handler.handle_exception(exception, operation, duration_ms)


def with_error_handling(operation_name: str):
    """Decorator that logs and re-raises failures as SpoofCueException subclasses"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            try:
                return func(*args, **kwargs)
            except SpoofCueException as e:
                handle_error(e, operation_name, (time.time() - start_time) * 1000)
                raise
            except Exception as e:
                duration_ms = (time.time() - start_time) * 1000
                error_context = handle_error(e, operation_name, duration_ms)
                raise SpoofCueException(
                    error_context.message,
                    category=error_context.category,
                    severity=error_context.severity,
                    error_code=error_context.error_code,
                    details=error_context.details,
                    recoverable=error_context.recoverable
                ) from e
        return wrapper
    return decorator
