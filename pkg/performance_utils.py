"""
Performance Utilities
Timing decorator and slow-operation monitoring
"""

import time
import logging
from dataclasses import dataclass
from functools import wraps
from typing import Dict, Callable

from logging_config import viewloom_logger

logger = logging.getLogger(__name__)

SLOW_OPERATION_SECONDS = 2.0


@dataclass
class TimingStats:
    count: int = 0
    total_seconds: float = 0.0
    max_seconds: float = 0.0

    def add(self, seconds: float) -> None:
        self.count += 1
        self.total_seconds += seconds
        self.max_seconds = max(self.max_seconds, seconds)

    @property
    def mean_seconds(self) -> float:
        return self.total_seconds / self.count if self.count else 0.0


class PerformanceMonitor:
    """Running timings per named operation; never written into deterministic outputs."""

    def __init__(self):
        self.metrics: Dict[str, TimingStats] = {}

    def time_function(self, name: str):
        """Decorator to time function execution."""
        def decorator(func: Callable) -> Callable:
            @wraps(func)
            def wrapper(*args, **kwargs):
                start = time.perf_counter()
                try:
                    return func(*args, **kwargs)
                except Exception as e:
                    logger.error(f"{name} failed after {time.perf_counter() - start:.3f}s: {e}")
                    raise
                finally:
                    self.log_metric(name, time.perf_counter() - start)
            return wrapper
        return decorator

    def log_metric(self, name: str, seconds: float):
        self.metrics.setdefault(name, TimingStats()).add(seconds)
        viewloom_logger.log_performance_metric(name, seconds)
        if seconds > SLOW_OPERATION_SECONDS:
            logger.warning(f"Slow operation detected: {name} took {seconds:.3f}s")

    def summary(self) -> Dict[str, Dict[str, float]]:
        """Per-operation count, mean, max and total, for the run manifest."""
        return {
            name: {
                "count": stats.count,
                "mean_seconds": stats.mean_seconds,
                "max_seconds": stats.max_seconds,
                "total_seconds": stats.total_seconds,
            }
            for name, stats in sorted(self.metrics.items())
        }

    def reset(self):
        self.metrics.clear()


# Global performance monitor
perf_monitor = PerformanceMonitor()
