"""
Error Handling Module
Exception hierarchy, CLI exit codes and wire-protocol error bodies
"""

import logging
from typing import Dict, Any, Optional, List

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_CONTRACT = 4


class ViewloomError(Exception):
    """Base class for every error raised by the engine."""

    code = "error"


class InvalidArgumentError(ViewloomError, ValueError):
    """A precondition on an argument does not hold."""

    code = "invalid-argument"


class FileFormatError(ViewloomError):
    """A file could not be parsed: malformed header or truncated body."""

    code = "file-format"


class UnknownPropertyError(FileFormatError):
    """A required PLY property is missing."""

    code = "unknown-required-property"


class BackendUnavailableError(ViewloomError):
    """The completion backend could not be reached."""

    code = "backend-unavailable"


class MalformedResponseError(ViewloomError):
    """The completion backend answered with something we cannot use."""

    code = "malformed-response"


class ContractViolationError(ViewloomError):
    """A completer changed known pixels beyond its tolerance.

    The pipeline attaches the audit gathered so far so callers can persist it.
    """

    code = "contract-violation"

    def __init__(self, message: str, records: Optional[List[Any]] = None):
        super().__init__(message)
        self.records = list(records or [])


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, ContractViolationError):
        return EXIT_CONTRACT
    if isinstance(error, (BackendUnavailableError, MalformedResponseError)):
        return EXIT_BACKEND
    if isinstance(error, (ViewloomError, FileNotFoundError, IsADirectoryError, ValueError)):
        return EXIT_USAGE
    logger.error(f"Unexpected error: {error!r}")
    return 1


def create_error_response(code: str, message: str, details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Create a standardized wire-protocol error body."""
    response: Dict[str, Any] = {
        "code": code,
        "message": message,
    }

    if details:
        response["details"] = details

    return response


def describe_error(error: BaseException) -> Dict[str, Any]:
    """Error summary for audit files."""
    return {
        "code": getattr(error, "code", type(error).__name__),
        "message": str(error),
    }
