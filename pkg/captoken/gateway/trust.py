# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Trusted issuers and their key sets, kept current from discovery documents.
"""

import logging

from pydantic import BaseModel

from captoken.clock import Clock, SystemClock
from captoken.core.claims import IssuerMetadata
from captoken.errors import CaptokenError
from captoken.server.client import IssuerClient

logger = logging.getLogger(__name__)


class IssuerStatus(BaseModel):
    issuer: str
    fetched_at: int | None = None
    stale_since: int | None = None
    last_error: str | None = None
    key_ids: list[str] = []


class TrustStore:
    """
    Discovery-backed trust for a fixed list of issuer URLs.

    A failed re-fetch keeps the previous key set and records since when the
    entry has been stale.

    Args:
        issuers: Trusted issuer URLs
        clients: Issuer clients by URL; an HTTP client is created for the rest
        clock: Time source
    """

    def __init__(
        self,
        issuers: list[str],
        clients: dict[str, IssuerClient] | None = None,
        clock: Clock | None = None,
    ):
        self.clock = clock if clock is not None else SystemClock()
        clients = clients or {}
        self._clients = {issuer: clients.get(issuer) or IssuerClient(issuer) for issuer in issuers}
        self._metadata: dict[str, IssuerMetadata] = {}
        self.status: dict[str, IssuerStatus] = {
            issuer: IssuerStatus(issuer=issuer) for issuer in issuers
        }

    def trusted(self) -> dict[str, IssuerMetadata]:
        return dict(self._metadata)

    def seed(self, metadata: IssuerMetadata) -> None:
        """Install a discovery document directly (e.g. from a local file)."""
        if metadata.issuer not in self.status:
            raise CaptokenError(f"issuer {metadata.issuer!r} is not in the trusted list")
        self._metadata[metadata.issuer] = metadata
        status = self.status[metadata.issuer]
        status.fetched_at = self.clock.now()
        status.stale_since = None
        status.key_ids = [key.kid for key in metadata.keys]

    async def refresh_trust(self, now: int | None = None) -> dict[str, IssuerStatus]:
        """
        Re-fetch every issuer's discovery document.

        Returns:
            dict: issuer -> status after this round
        """
        now = self.clock.now() if now is None else now
        for issuer, client in self._clients.items():
            status = self.status[issuer]
            try:
                metadata = await client.fetch_metadata()
                if metadata.issuer != issuer:
                    raise CaptokenError(f"discovery names issuer {metadata.issuer!r}")
            except CaptokenError as e:
                status.last_error = e.reason
                if status.stale_since is None:
                    status.stale_since = now
                logger.warning(
                    "Trust refresh failed, keeping previous keys",
                    extra={"issuer": issuer, "error": e.reason},
                )
                continue
            except ValueError as e:
                status.last_error = "Malformed"
                status.stale_since = status.stale_since or now
                logger.warning(f"Discovery document rejected: {e}", extra={"issuer": issuer})
                continue

            self._metadata[issuer] = metadata
            status.fetched_at = now
            status.stale_since = None
            status.last_error = None
            status.key_ids = [key.kid for key in metadata.keys]
            logger.info("Trust refreshed", extra={"issuer": issuer, "keys": len(metadata.keys)})

        return {issuer: status.model_copy() for issuer, status in self.status.items()}
