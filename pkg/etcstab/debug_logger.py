"""
debug_logger.py - Flexible Debug Logging Module

This module provides a `DebugLogger` class for conditional diagnostic output.
It sits on top of the standard `logging` package (logger name ``etcstab``) and
is designed for easy integration with argparse: the value of ``--debug`` is
passed straight in. Solvers, the simulator and the analysis routines all accept
one of these and fall back to `NULL_LOGGER` when none is given.
"""
import logging
import sys
from typing import Any, Iterable, Optional, TextIO, Union

_LOGGER_NAME = "etcstab"
_FORMAT = "%(asctime)s %(levelname)-7s %(message)s"


class DebugLogger:
    """
    A flexible logger for handling debug output.

    Usage:
    ```python
    with DebugLogger(args.debug) as logger:
        logger.log("Riccati converged in 6 iterations")
    ```

    Warnings are always written to stderr, whether or not debug output is on.
    """
    def __init__(self, debug_arg: Union[bool, str, None], name: str = _LOGGER_NAME):
        """
        Initializes the DebugLogger.

        Args:
            debug_arg: The debug flag or file path. True or "-" logs to stderr,
                       any other string logs to that file path.
            name: Name of the underlying `logging.Logger`.
        """
        self.is_active: bool = bool(debug_arg)
        self._logger = logging.getLogger(name)
        self._logger.setLevel(logging.DEBUG)
        self._propagate = self._logger.propagate
        self._logger.propagate = False
        self._handlers: list = []

        warn_handler = logging.StreamHandler(sys.stderr)
        warn_handler.setLevel(logging.WARNING)
        warn_handler.setFormatter(logging.Formatter("Warning: %(message)s"))
        self._attach(warn_handler)

        if not self.is_active:
            return

        stream: Optional[TextIO] = None
        if isinstance(debug_arg, str) and debug_arg != "-":
            try:
                handler: logging.Handler = logging.FileHandler(debug_arg, mode="w", encoding="utf-8")
            except OSError as e:
                print(f"Error opening debug file '{debug_arg}': {e}", file=sys.stderr)
                self.is_active = False
                return
        else:
            stream = sys.stderr
            handler = logging.StreamHandler(stream)
        handler.setLevel(logging.DEBUG)
        handler.setFormatter(logging.Formatter(_FORMAT))
        self._attach(handler)

    def _attach(self, handler: logging.Handler) -> None:
        self._logger.addHandler(handler)
        self._handlers.append(handler)

    def log(self, message: str) -> None:
        """Writes a debug-level message if logging is active."""
        if self.is_active:
            self._logger.debug(message)

    def warn(self, message: str) -> None:
        """Writes a warning; always visible on stderr."""
        self._logger.warning(message)

    def section(self, title: str, lines: Iterable[str]) -> None:
        """
        Writes a banner block, one debug record per line.

        Args:
            title: Heading shown between dashes.
            lines: Body lines of the block.
        """
        if not self.is_active:
            return
        self.log(f"--- {title} ---")
        for line in lines:
            self.log(line)
        self.log("-" * (len(title) + 8))

    def close(self) -> None:
        """
        Detaches and closes the handlers this instance installed.
        Called automatically when used as a context manager.
        """
        for handler in self._handlers:
            self._logger.removeHandler(handler)
            handler.close()
        self._handlers = []
        self._logger.propagate = self._propagate
        self.is_active = False

    def __enter__(self) -> 'DebugLogger':
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        self.close()


class _NullLogger:
    """Stand-in used by library functions called without a logger."""
    is_active = False

    def log(self, message: str) -> None:
        pass

    def warn(self, message: str) -> None:
        logging.getLogger(_LOGGER_NAME).warning(message)

    def section(self, title: str, lines: Iterable[str]) -> None:
        pass


NULL_LOGGER: Any = _NullLogger()
