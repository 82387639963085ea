# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Append-only JSON-lines journal.

Stores persist by appending one JSON object per mutation and rebuild their
in-memory state by replaying the file at startup. Writes are flushed and
fsynced before `append` returns. A torn final line (crash mid-append) is
dropped on replay and cut from the file; corruption anywhere else is an error.
"""

import json
import logging
import os
import threading
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from captoken.errors import JournalError

logger = logging.getLogger(__name__)

FILE_MODE = 0o600


@dataclass
class Journal:
    path: Path
    fsync: bool = True
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            logger.info("Journal exists, state will be replayed", extra={"path": str(self.path)})
        fd = os.open(self.path, os.O_CREAT | os.O_APPEND | os.O_WRONLY, FILE_MODE)
        os.close(fd)
        os.chmod(self.path, FILE_MODE)

    def append(self, record: dict[str, Any]) -> None:
        """
        Append one record durably.

        Args:
            record: JSON-serializable mapping

        Raises:
            JournalError: If the write fails
        """
        line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as fp:
                    fp.write(line)
                    fp.flush()
                    if self.fsync:
                        os.fsync(fp.fileno())
            except OSError as e:
                raise JournalError(f"append to {self.path} failed: {e}") from e

    def replay(self) -> Iterator[dict[str, Any]]:
        """
        Yield every intact record in append order.

        A record counts once its newline is on disk. An unterminated final
        line is dropped and cut from the file, so the next append starts on
        a fresh line.

        Raises:
            JournalError: If a record other than the last one is corrupt
        """
        records: list[dict[str, Any]] = []
        with self._lock:
            data = self.path.read_bytes()
            intact = 0
            for lineno, line in enumerate(data.splitlines(keepends=True), start=1):
                if not line.endswith(b"\n"):
                    break
                intact += len(line)
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except ValueError as e:
                    raise JournalError(f"{self.path}:{lineno}: corrupt record") from e

            if intact < len(data):
                logger.warning(
                    "Dropping torn journal tail",
                    extra={"path": str(self.path), "bytes": len(data) - intact},
                )
                try:
                    os.truncate(self.path, intact)
                except OSError as e:
                    raise JournalError(f"cannot cut torn tail of {self.path}: {e}") from e

        yield from records
