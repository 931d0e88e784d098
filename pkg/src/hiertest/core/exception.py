import sys
import logging
from typing import Optional, Sequence


def error_message_detail(error: Exception, error_detail: sys) -> str:
    """
    Extract detailed error information including file name, line number, and the error message.

    Args:
        error (Exception): The exception that occurred.
        error_detail (sys): The sys module to access traceback details.

    Returns:
        str: Formatted error message string.
    """
    _, _, exc_tb = error_detail.exc_info()

    if exc_tb is not None:
        file_name = exc_tb.tb_frame.f_code.co_filename
        line_number = exc_tb.tb_lineno
        error_message = (
            f"Error occurred in file: [{file_name}] "
            f"at line number [{line_number}] "
            f"with error: {str(error)}"
        )
    else:
        error_message = f"Error occurred: {str(error)} (no traceback available)"

    logging.error(error_message)
    return error_message


class AppException(Exception):
    """
    Root of every error raised by hiertest.

    Each subclass carries the process exit code the CLI reports for it.
    """

    exit_code: int = 1

    def __init__(self, error_message, error_detail=None, detail: Optional[str] = None):
        """
        Args:
            error_message (str or Exception): A string describing the error, or an Exception object.
            error_detail (sys, optional): The sys module, to record file/line of the active traceback.
            detail (str, optional): Additional context appended to the message.
        """
        if isinstance(error_message, Exception):
            error_msg_str = str(error_message)
            error_exception = error_message
        else:
            error_msg_str = str(error_message)
            error_exception = Exception(error_msg_str)

        super().__init__(error_msg_str)

        if detail is not None:
            self.error_message = f"{error_msg_str}: {detail}"
        elif error_detail is not None:
            self.error_message = error_message_detail(error_exception, error_detail)
        else:
            self.error_message = error_msg_str

    def __str__(self) -> str:
        return self.error_message

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.error_message})"


class ConfigError(AppException):
    """Malformed config, hierarchy spec, strategy document or missing test entry."""

    exit_code = 2

    def __init__(self, error_message, error_detail=None, detail: Optional[str] = None,
                 field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        location = []
        if field:
            location.append(f"field '{field}'")
        if line is not None:
            location.append(f"line {line}")
        if location and detail is None:
            detail = ", ".join(location)
        super().__init__(error_message, error_detail, detail)


class PreconditionError(AppException):
    """An operation was called outside its domain."""

    exit_code = 3


class InvalidStrategyError(PreconditionError):
    """Strategy failed validation; `errors` lists every problem found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid strategy", detail="; ".join(self.errors))


class GuardExceededError(AppException):
    """Instance too large for an exhaustive computation."""

    exit_code = 4

    def __init__(self, what: str, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(f"{what} guard exceeded", detail=f"size {size} > limit {limit}")
