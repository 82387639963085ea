# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Rendezvous directory handoff.

The web-facing authorization helper and the credential daemon run under
different accounts. The helper drops each one-time code into the rendezvous
directory as one JSON file named by a random UUID, written to a dot-prefixed
temp name and renamed into place so the daemon never sees a partial file.
"""

import logging
import os
import shutil
import stat
import uuid
from pathlib import Path

from captoken.credd.config import QUARANTINE_DIR
from captoken.credd.models import DepositFile, QuarantineRecord
from captoken.errors import DirectoryUnreadable

logger = logging.getLogger(__name__)

DIRECTORY_MODE = 0o770
DEPOSIT_MODE = 0o640
DEPOSIT_SUFFIX = ".json"


def prepare_directory(directory: Path) -> Path:
    """Create the rendezvous directory (and its quarantine) group-private."""
    directory = Path(directory)
    (directory / QUARANTINE_DIR).mkdir(parents=True, exist_ok=True)
    os.chmod(directory, DIRECTORY_MODE)
    os.chmod(directory / QUARANTINE_DIR, DIRECTORY_MODE)
    return directory


def deposit(directory: Path, entry: DepositFile) -> Path:
    """
    Write one deposit atomically (helper side).

    Args:
        directory: Rendezvous directory
        entry: The code and the credential it is for

    Returns:
        Path: Final path of the deposit file
    """
    directory = Path(directory)
    name = str(uuid.uuid4())
    temp = directory / f".{name}.tmp"
    final = directory / f"{name}{DEPOSIT_SUFFIX}"

    fd = os.open(temp, os.O_CREAT | os.O_EXCL | os.O_WRONLY, DEPOSIT_MODE)
    with os.fdopen(fd, "w", encoding="utf-8") as fp:
        fp.write(entry.model_dump_json())
        fp.flush()
        os.fsync(fp.fileno())
    os.replace(temp, final)

    logger.info("Deposited authorization code", extra={"file": final.name, "user": entry.user})
    return final


def pending_deposits(directory: Path) -> list[Path]:
    """
    List complete deposit files, oldest name first.

    Raises:
        DirectoryUnreadable: If the directory is missing or unreadable
    """
    directory = Path(directory)
    try:
        mode = directory.stat().st_mode
        names = sorted(os.listdir(directory))
    except OSError as e:
        raise DirectoryUnreadable(f"cannot read rendezvous directory {directory}: {e}") from e

    if mode & (stat.S_IROTH | stat.S_IWOTH | stat.S_IXOTH):
        logger.warning(
            "Rendezvous directory is accessible to other accounts",
            extra={"directory": str(directory), "mode": oct(stat.S_IMODE(mode))},
        )

    return [
        directory / name
        for name in names
        if name.endswith(DEPOSIT_SUFFIX) and not name.startswith(".")
    ]


def quarantine(path: Path, reason: str, detail: str = "") -> QuarantineRecord:
    """
    Move a deposit that could not be used aside, with a `.reason` sidecar.

    Quarantined files are never deleted by the daemon.
    """
    target_dir = path.parent / QUARANTINE_DIR
    target_dir.mkdir(exist_ok=True)
    target = target_dir / path.name
    shutil.move(str(path), target)

    record = QuarantineRecord(file=path.name, reason=reason, detail=detail)
    (target_dir / f"{path.name}.reason").write_text(record.model_dump_json(), encoding="utf-8")
    logger.warning("Deposit quarantined", extra={"file": path.name, "reason": reason})
    return record
