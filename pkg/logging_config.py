"""
Enhanced Logging Configuration
Centralized logging setup with different levels for different components
"""

import logging
import sys
from typing import Dict, Any, Optional

from config import LOGGING_CONFIG


class ViewloomLogger:
    """Component-specific logging for the reconstruction engine."""

    def __init__(self):
        self.loggers: Dict[str, logging.Logger] = {}
        self._configured = False
        self._register_components()

    def _register_components(self):
        self.loggers['pipeline'] = logging.getLogger('viewloom.pipeline')
        self.loggers['backend'] = logging.getLogger('viewloom.backend')
        self.loggers['io'] = logging.getLogger('viewloom.io')
        self.loggers['server'] = logging.getLogger('viewloom.server')
        self.loggers['performance'] = logging.getLogger('viewloom.performance')

        self.loggers['backend'].setLevel(logging.INFO)  # one line per request is plenty
        self.loggers['performance'].setLevel(logging.WARNING)  # Only show warnings

    def setup_logging(self, verbose: bool = False, level: Optional[str] = None):
        """Setup logging configuration for the application."""
        if verbose:
            root_level = logging.DEBUG
        else:
            root_level = getattr(logging, (level or LOGGING_CONFIG["level"]).upper(), logging.INFO)

        root = logging.getLogger()
        if not self._configured:
            handler = logging.StreamHandler(sys.stderr)
            handler.setFormatter(logging.Formatter(LOGGING_CONFIG["format"]))
            root.addHandler(handler)
            self._configured = True
        root.setLevel(root_level)

        if verbose:
            self.loggers['performance'].setLevel(logging.INFO)

    def get_logger(self, component: str) -> logging.Logger:
        """Get logger for specific component."""
        return self.loggers.get(component, logging.getLogger(f'viewloom.{component}'))

    def log_step(self, step: int, azimuth: float, elevation: float, added: int, total: int):
        """Log one trajectory step of the progressive loop."""
        logger = self.get_logger('pipeline')
        logger.info(f"Step {step:02d} - az {azimuth:+.1f}, el {elevation:+.1f}: "
                    f"{added} points added, {total} total")

    def log_backend_request(self, endpoint: str, kind: str, elapsed: float, attempt: int = 1):
        """Log a completion request with timing."""
        logger = self.get_logger('backend')
        logger.info(f"Backend {kind} - {endpoint} answered in {elapsed:.3f}s (attempt {attempt})")

    def log_performance_metric(self, metric_name: str, value: float, context: str = ""):
        """Log performance metrics."""
        logger = self.get_logger('performance')
        logger.info(f"Performance - {metric_name}: {value:.3f}s" + (f" ({context})" if context else ""))

    def log_file_written(self, path: str, details: Optional[Dict[str, Any]] = None):
        logger = self.get_logger('io')
        logger.debug(f"Wrote {path}" + (f" {details}" if details else ""))


# Global logger instance
viewloom_logger = ViewloomLogger()
