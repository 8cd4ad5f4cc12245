#!/usr/bin/env python3
"""
Performance Monitoring and Metrics Collection for training and evaluation.

Features:
- Per-operation timing (train steps, evaluation passes, synthetic generation)
- Latency percentiles and success rates
- Slow operation alerts
- JSON export of the performance summary
"""

import functools
import json
import logging
import statistics
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass
class PerformanceMetric:
    """Individual performance metric data point"""
    timestamp: datetime
    operation: str
    duration_ms: float
    success: bool
    error_category: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)


@dataclass
class OperationStats:
    """Aggregated statistics for an operation"""
    operation: str
    total_calls: int = 0
    successful_calls: int = 0
    failed_calls: int = 0
    total_duration_ms: float = 0.0
    min_duration_ms: float = float('inf')
    max_duration_ms: float = 0.0
    durations: deque = field(default_factory=lambda: deque(maxlen=1000))

    @property
    def success_rate(self) -> float:
        """Calculate success rate percentage"""
        if self.total_calls == 0:
            return 0.0
        return (self.successful_calls / self.total_calls) * 100

    @property
    def average_duration_ms(self) -> float:
        if self.total_calls == 0:
            return 0.0
        return self.total_duration_ms / self.total_calls

    @property
    def percentiles(self) -> Dict[str, float]:
        """Calculate duration percentiles"""
        if not self.durations:
            return {"p50": 0.0, "p95": 0.0, "p99": 0.0}

        sorted_durations = sorted(self.durations)
        n = len(sorted_durations)

        return {
            "p50": sorted_durations[int(n * 0.5)],
            "p95": sorted_durations[min(int(n * 0.95), n - 1)],
            "p99": sorted_durations[min(int(n * 0.99), n - 1)]
        }

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization"""
        percentiles = self.percentiles
        return {
            "operation": self.operation,
            "total_calls": self.total_calls,
            "successful_calls": self.successful_calls,
            "failed_calls": self.failed_calls,
            "success_rate": round(self.success_rate, 2),
            "average_duration_ms": round(self.average_duration_ms, 2),
            "min_duration_ms": round(self.min_duration_ms, 2) if self.total_calls else 0.0,
            "max_duration_ms": round(self.max_duration_ms, 2),
            "p50_duration_ms": round(percentiles["p50"], 2),
            "p95_duration_ms": round(percentiles["p95"], 2),
            "p99_duration_ms": round(percentiles["p99"], 2)
        }


class PerformanceMonitor:
    """Timing monitor shared by the trainer and evaluator"""

    def __init__(
        self,
        enable_detailed_metrics: bool = True,
        max_history_size: int = 10000,
        slow_operation_ms: float = 60000.0
    ):
        self.enable_detailed_metrics = enable_detailed_metrics
        self.metrics_history: deque = deque(maxlen=max_history_size)
        self.operation_stats: Dict[str, OperationStats] = {}
        self.start_time = datetime.now()
        self.lock = threading.RLock()
        self.thresholds = {"slow_operation_ms": slow_operation_ms}

    def record_operation(
        self,
        operation: str,
        duration_ms: float,
        success: bool = True,
        error_category: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None
    ):
        """Record a performance metric for an operation"""
        metric = PerformanceMetric(
            timestamp=datetime.now(),
            operation=operation,
            duration_ms=duration_ms,
            success=success,
            error_category=error_category,
            metadata=metadata or {}
        )

        with self.lock:
            if self.enable_detailed_metrics:
                self.metrics_history.append(metric)

            stats = self.operation_stats.setdefault(operation, OperationStats(operation=operation))
            stats.total_calls += 1
            stats.total_duration_ms += duration_ms
            stats.durations.append(duration_ms)
            if success:
                stats.successful_calls += 1
            else:
                stats.failed_calls += 1
            stats.min_duration_ms = min(stats.min_duration_ms, duration_ms)
            stats.max_duration_ms = max(stats.max_duration_ms, duration_ms)

            if duration_ms > self.thresholds["slow_operation_ms"]:
                logger.warning(
                    f"Slow operation detected: {operation} took {duration_ms:.1f}ms "
                    f"(threshold: {self.thresholds['slow_operation_ms']}ms)"
                )

    def get_operation_stats(self, operation: Optional[str] = None) -> Dict[str, Any]:
        """Get statistics for specific operation or all operations"""
        with self.lock:
            if operation:
                stats = self.operation_stats.get(operation)
                return stats.to_dict() if stats else {}
            return {op: stats.to_dict() for op, stats in self.operation_stats.items()}

    def get_performance_summary(self) -> Dict[str, Any]:
        with self.lock:
            uptime = datetime.now() - self.start_time
            total_calls = sum(stats.total_calls for stats in self.operation_stats.values())
            total_errors = sum(stats.failed_calls for stats in self.operation_stats.values())
            recent = list(self.metrics_history)[-100:]
            return {
                "uptime_seconds": int(uptime.total_seconds()),
                "total_calls": total_calls,
                "total_errors": total_errors,
                "recent_average_duration_ms": round(
                    statistics.mean(m.duration_ms for m in recent), 2
                ) if recent else 0.0,
                "operation_stats": self.get_operation_stats(),
            }

    def export_metrics(self, format: str = "json") -> str:
        """Export metrics in specified format"""
        data = self.get_performance_summary()
        if format.lower() == "json":
            return json.dumps(data, indent=2, default=str)
        raise ValueError(f"Unsupported export format: {format}")


# Global performance monitor instance
global_performance_monitor = PerformanceMonitor()


class PerformanceTimer:
    """Context manager for timing operations"""

    def __init__(
        self,
        operation: str,
        monitor: Optional[PerformanceMonitor] = None,
        metadata: Optional[Dict[str, Any]] = None,
        log_level: int = logging.DEBUG
    ):
        self.operation = operation
        self.monitor = monitor or global_performance_monitor
        self.metadata = metadata or {}
        self.log_level = log_level
        self.start_time = None
        self.duration_ms = 0.0
        self.success = True
        self.error_category = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration_ms = (time.perf_counter() - self.start_time) * 1000

        if exc_type is not None:
            self.success = False
            self.error_category = exc_type.__name__

        self.monitor.record_operation(
            operation=self.operation,
            duration_ms=self.duration_ms,
            success=self.success,
            error_category=self.error_category,
            metadata=self.metadata
        )

        status = "SUCCESS" if self.success else f"ERROR({self.error_category})"
        logger.log(self.log_level, f"Operation: {self.operation} - {self.duration_ms:.1f}ms - {status}")

        return False


def timed_operation(operation_name: str, metadata: Optional[Dict[str, Any]] = None):
    """Decorator for automatic operation timing"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with PerformanceTimer(operation_name, metadata=metadata, log_level=logging.INFO):
                return func(*args, **kwargs)
        return wrapper
    return decorator


def log_performance_summary(monitor: Optional[PerformanceMonitor] = None):
    """Log current performance summary"""
    monitor = monitor or global_performance_monitor
    summary = monitor.get_performance_summary()

    logger.info("=== PERFORMANCE SUMMARY ===")
    logger.info(f"Uptime: {summary['uptime_seconds']}s, operations: {summary['total_calls']}, "
                f"errors: {summary['total_errors']}")
    operations: List = sorted(
        summary["operation_stats"].items(), key=lambda x: x[1]["total_calls"], reverse=True
    )
    for op_name, stats in operations[:5]:
        logger.info(f"{op_name}: {stats['total_calls']} calls, "
                    f"{stats['average_duration_ms']}ms avg, p95 {stats['p95_duration_ms']}ms")
