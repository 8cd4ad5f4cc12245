#!/usr/bin/env python3
"""
Error handling, performance timing and step log tests
"""

import json

import pytest
from pydantic import BaseModel, ValidationError

from src.monitoring.error import (
    ErrorCategory,
    ErrorHandler,
    ManifestError,
    NonFiniteLossError,
    SpoofCueException,
    with_error_handling,
)
from src.monitoring.performance import PerformanceMonitor, PerformanceTimer
from src.monitoring.step_log import StepLog, StepRecord


class _Strict(BaseModel):
    value: int


@pytest.mark.parametrize("exception, category", [
    (FileNotFoundError("missing.png"), ErrorCategory.DATA_IO),
    (ValueError("bad value"), ErrorCategory.VALIDATION),
    (RuntimeError("size mismatch for conv1.weight"), ErrorCategory.SHAPE),
    (KeyError("x"), ErrorCategory.UNKNOWN),
])
def test_library_exceptions_are_categorized(exception, category):
    handler = ErrorHandler()
    assert handler.handle_exception(exception, "op").category is category
    assert handler.get_error_summary()["error_counts_by_category"] == {category.value: 1}


def test_pydantic_errors_are_configuration_errors():
    with pytest.raises(ValidationError) as excinfo:
        _Strict(value="not a number")
    context = ErrorHandler().handle_exception(excinfo.value)
    assert context.category is ErrorCategory.CONFIGURATION
    assert not context.recoverable


def test_own_exceptions_keep_their_context():
    error = ManifestError("broken record", line_number=7)
    context = ErrorHandler().handle_exception(error, "load_manifest", 1.5)
    assert context.category is ErrorCategory.MANIFEST
    assert context.details["line_number"] == 7
    assert context.operation == "load_manifest"
    assert str(error) == "line 7: broken record"


def test_non_finite_loss_carries_components():
    error = NonFiniteLossError("nan", components={"regression": float("nan"), "auxiliary": 0.3})
    assert error.details["components"]["auxiliary"] == 0.3
    assert error.context.category is ErrorCategory.NUMERICAL


def test_error_history_is_bounded():
    handler = ErrorHandler()
    handler.max_history_size = 3
    for i in range(5):
        handler.handle_exception(ValueError(str(i)))
    summary = handler.get_error_summary()
    assert summary["total_errors"] == 3
    assert [e["message"] for e in summary["recent_errors"]] == ["2", "3", "4"]


def test_with_error_handling_wraps_library_errors():
    @with_error_handling("read")
    def read():
        raise OSError("disk unavailable")

    with pytest.raises(SpoofCueException) as excinfo:
        read()
    assert excinfo.value.context.category is ErrorCategory.DATA_IO
    assert isinstance(excinfo.value.__cause__, OSError)


def test_performance_timer_records_success_and_failure():
    monitor = PerformanceMonitor()
    with PerformanceTimer("step", monitor=monitor):
        pass
    with pytest.raises(ValueError):
        with PerformanceTimer("step", monitor=monitor):
            raise ValueError("boom")

    stats = monitor.get_operation_stats("step")
    assert stats["total_calls"] == 2
    assert stats["failed_calls"] == 1
    assert json.loads(monitor.export_metrics())["total_errors"] == 1


def test_slow_operations_are_warned(caplog):
    monitor = PerformanceMonitor(slow_operation_ms=10.0)
    monitor.record_operation("evaluate", 25.0)
    assert "Slow operation detected: evaluate" in caplog.text


def test_step_log_truncates_for_resume(tmp_path):
    log = StepLog(tmp_path / "train_log.jsonl")
    log.reset()
    for step in range(1, 6):
        log.append(StepRecord(step=step, epoch=(step - 1) // 2, lr=1e-3, regression=0.1, total=float(step)))
    log.truncate_after(3)
    assert [r["step"] for r in log.read()] == [1, 2, 3]
    log.append(StepRecord(step=4, epoch=1, lr=1e-3, regression=0.1, total=4.0))
    assert [r["total"] for r in log] == [1.0, 2.0, 3.0, 4.0]
