# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Persistent credential store: one journal, `creds.journal`, replayed at start.
"""

import logging
import threading
from pathlib import Path

from captoken.credd.config import CREDS_JOURNAL
from captoken.credd.models import CredentialKey, StoredCredential
from captoken.errors import JournalError, StoreWriteFailed
from captoken.helpers import register_secret
from captoken.journal import Journal

logger = logging.getLogger(__name__)


class CredentialStore:
    """
    Single-writer, multi-reader map of CredentialKey -> StoredCredential.

    Args:
        state_dir: Directory for the journal; None keeps everything in memory
    """

    def __init__(self, state_dir: Path | None = None):
        self._lock = threading.Lock()
        self._credentials: dict[CredentialKey, StoredCredential] = {}
        self._journal = Journal(Path(state_dir) / CREDS_JOURNAL) if state_dir else None
        self.replayed = 0
        if self._journal is not None:
            self._replay()

    def _replay(self) -> None:
        assert self._journal is not None
        for event in self._journal.replay():
            if event["op"] == "put":
                credential = StoredCredential.model_validate(event["credential"])
                if credential.refresh_handle is not None:
                    register_secret(credential.refresh_handle.get_secret_value())
                self._credentials[credential.key] = credential
            elif event["op"] == "delete":
                self._credentials.pop(CredentialKey.model_validate(event["key"]), None)
        self.replayed = len(self._credentials)
        logger.info("Credential store replayed", extra={"credentials": self.replayed})

    def _append(self, event: dict) -> None:
        if self._journal is None:
            return
        try:
            self._journal.append(event)
        except JournalError as e:
            raise StoreWriteFailed(str(e)) from e

    def get(self, key: CredentialKey) -> StoredCredential | None:
        return self._credentials.get(key)

    def put(self, credential: StoredCredential) -> StoredCredential | None:
        """Upsert; returns the credential it replaced, if any."""
        with self._lock:
            self._append({"op": "put", "credential": credential.to_journal()})
            previous = self._credentials.get(credential.key)
            self._credentials[credential.key] = credential
            return previous

    def delete(self, key: CredentialKey) -> StoredCredential | None:
        with self._lock:
            if key not in self._credentials:
                return None
            self._append({"op": "delete", "key": key.model_dump(mode="json")})
            return self._credentials.pop(key)

    def all(self) -> list[StoredCredential]:
        return list(self._credentials.values())

    def __len__(self) -> int:
        return len(self._credentials)
