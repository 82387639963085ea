# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Token server state: clients, grants, refresh records and the audit log.

Each collection is backed by its own append-only journal and rebuilt by replay
at startup. All mutations go through one lock, so read-modify-write steps such
as consuming a code or revoking a handle are atomic.
"""

import logging
import threading
from pathlib import Path

from captoken.journal import Journal
from captoken.server.models import (
    AuditEntry,
    AuthorizationGrant,
    ClientRecord,
    RefreshTokenRecord,
)

logger = logging.getLogger(__name__)

CLIENTS_JOURNAL = "clients.journal"
GRANTS_JOURNAL = "grants.journal"
REFRESH_JOURNAL = "refresh.journal"
AUDIT_JOURNAL = "audit.journal"


class ServerStore:
    """
    In-memory collections with optional journal persistence.

    Args:
        state_dir: Directory holding the journals; None keeps state in memory only
    """

    def __init__(self, state_dir: Path | None = None):
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.lock = threading.RLock()

        self.clients: dict[str, ClientRecord] = {}
        self.grants: dict[str, AuthorizationGrant] = {}
        self.refresh: dict[str, RefreshTokenRecord] = {}
        self.audit: list[AuditEntry] = []

        self._journals: dict[str, Journal] = {}
        if self.state_dir is not None:
            for name in (CLIENTS_JOURNAL, GRANTS_JOURNAL, REFRESH_JOURNAL, AUDIT_JOURNAL):
                self._journals[name] = Journal(self.state_dir / name)
            self._replay()

    def _append(self, journal: str, record: dict) -> None:
        if journal in self._journals:
            self._journals[journal].append(record)

    def _replay(self) -> None:
        for event in self._journals[CLIENTS_JOURNAL].replay():
            if event["op"] == "put":
                record = ClientRecord.model_validate(event["record"])
                self.clients[record.client_id] = record
            elif event["op"] == "delete":
                self.clients.pop(event["client_id"], None)

        for event in self._journals[GRANTS_JOURNAL].replay():
            if event["op"] == "put":
                grant = AuthorizationGrant.model_validate(event["record"])
                self.grants[grant.code_digest] = grant
            elif event["op"] == "consume" and event["code_digest"] in self.grants:
                self.grants[event["code_digest"]].consumed = True

        for event in self._journals[REFRESH_JOURNAL].replay():
            if event["op"] == "put":
                record = RefreshTokenRecord.model_validate(event["record"])
                self.refresh[record.handle_digest] = record
            elif event["op"] == "revoke" and event["handle_digest"] in self.refresh:
                self.refresh[event["handle_digest"]].revoked = True

        for event in self._journals[AUDIT_JOURNAL].replay():
            self.audit.append(AuditEntry.model_validate(event))

        logger.info(
            "Server state replayed",
            extra={
                "clients": len(self.clients),
                "grants": len(self.grants),
                "refresh_records": len(self.refresh),
            },
        )

    # clients

    def put_client(self, record: ClientRecord) -> None:
        with self.lock:
            self._append(CLIENTS_JOURNAL, {"op": "put", "record": record.model_dump(mode="json")})
            self.clients[record.client_id] = record

    def delete_client(self, client_id: str) -> None:
        with self.lock:
            self._append(CLIENTS_JOURNAL, {"op": "delete", "client_id": client_id})
            self.clients.pop(client_id, None)

    # grants

    def put_grant(self, grant: AuthorizationGrant) -> None:
        with self.lock:
            self._append(GRANTS_JOURNAL, {"op": "put", "record": grant.model_dump(mode="json")})
            self.grants[grant.code_digest] = grant

    def consume_grant(self, code_digest: str) -> None:
        with self.lock:
            self._append(GRANTS_JOURNAL, {"op": "consume", "code_digest": code_digest})
            self.grants[code_digest].consumed = True

    # refresh records

    def put_refresh(self, record: RefreshTokenRecord) -> None:
        with self.lock:
            self._append(REFRESH_JOURNAL, {"op": "put", "record": record.model_dump(mode="json")})
            self.refresh[record.handle_digest] = record

    def revoke_refresh(self, handle_digest: str) -> None:
        with self.lock:
            record = self.refresh[handle_digest]
            if record.revoked:
                return
            self._append(REFRESH_JOURNAL, {"op": "revoke", "handle_digest": handle_digest})
            record.revoked = True

    # audit

    def add_audit(self, entry: AuditEntry) -> None:
        with self.lock:
            self._append(AUDIT_JOURNAL, entry.model_dump(mode="json"))
            self.audit.append(entry)
