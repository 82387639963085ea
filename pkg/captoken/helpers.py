# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Core helper functions for logging setup and secret scrubbing.
"""

import logging
import sys
import threading

logger = logging.getLogger(__name__)

REDACTED = "[REDACTED]"

# Attributes every LogRecord carries; anything else came in through `extra`.
_RECORD_ATTRS = frozenset(
    logging.LogRecord("", 0, "", 0, "", None, None).__dict__.keys()
) | {"message", "asctime", "taskName"}


class SecretScrubber(logging.Filter):
    """
    Logging filter that redacts registered secrets from every record.

    Client secrets, registration tokens and refresh handles are registered the
    moment they are created, so no handler ever sees them in plaintext.
    """

    def __init__(self) -> None:
        super().__init__()
        self._secrets: set[str] = set()
        self._lock = threading.Lock()

    def register(self, secret: str) -> None:
        if secret:
            with self._lock:
                self._secrets.add(secret)

    def scrub(self, text: str) -> str:
        with self._lock:
            secrets = list(self._secrets)
        for secret in secrets:
            if secret in text:
                text = text.replace(secret, REDACTED)
        return text

    def filter(self, record: logging.LogRecord) -> bool:
        record.msg = self.scrub(record.getMessage())
        record.args = None
        for key, value in list(record.__dict__.items()):
            if key not in _RECORD_ATTRS and isinstance(value, str):
                setattr(record, key, self.scrub(value))
        return True


class KeyValueFormatter(logging.Formatter):
    """Render records as one line, with `extra` fields appended as key=value."""

    def __init__(self) -> None:
        super().__init__("%(asctime)s %(levelname)s %(name)s %(message)s")

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        extras = []
        for key, value in record.__dict__.items():
            if key in _RECORD_ATTRS:
                continue
            if isinstance(value, str) and " " in value:
                value = repr(value)
            extras.append(f"{key}={value}")
        if extras:
            line = f"{line} {' '.join(extras)}"
        return line


scrubber = SecretScrubber()


def register_secret(secret: str) -> None:
    """
    Register a plaintext secret with the process-wide log scrubber.

    Args:
        secret: The value that must never appear in log output
    """
    scrubber.register(secret)


def setup_logging(level: int | str = logging.INFO) -> logging.Handler:
    """
    Install the structured stderr handler on the root logger.

    Args:
        level: Root log level

    Returns:
        logging.Handler: The installed handler

    Note:
        Calling this twice replaces the previous captoken handler.
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_captoken", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    handler.addFilter(scrubber)
    handler._captoken = True  # type: ignore[attr-defined]

    root.addHandler(handler)
    root.setLevel(level)
    return handler
