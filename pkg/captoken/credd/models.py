# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Credential daemon records.

Refresh handles are carried as `SecretStr`: they print masked, and
`ensure_untainted` refuses any message bound for the execute or data domain
that still holds one.
"""

from collections.abc import Mapping
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, SecretStr

from captoken.core.scopes import Scope
from captoken.errors import TaintViolation


class CredentialKey(BaseModel):
    """(user, provider, handle_name): the unique key of the credential store."""

    model_config = ConfigDict(frozen=True)

    user: str = Field(min_length=1)
    provider: str = Field(min_length=1)
    handle_name: str = Field(min_length=1)

    def __str__(self) -> str:
        return f"{self.user}/{self.provider}/{self.handle_name}"


class StoredCredential(BaseModel):
    key: CredentialKey
    # None for Local Mode credentials, which mint from project policy instead
    refresh_handle: SecretStr | None
    granted_scopes: list[Scope]
    obtained_at: int
    project: str | None = None

    def to_journal(self) -> dict[str, Any]:
        record = self.model_dump(mode="json")
        if self.refresh_handle is not None:
            record["refresh_handle"] = self.refresh_handle.get_secret_value()
        return record

    def summary(self) -> dict[str, Any]:
        """What LIST shows: never the handle."""
        return self.model_dump(mode="json", exclude={"refresh_handle"})


class CachedAccessToken(BaseModel):
    key: CredentialKey
    scopes: list[Scope]
    audience: str
    origin: str | None
    token: str
    issued_at: int
    expires_at: int

    def remaining(self, now: int) -> int:
        return self.expires_at - now

    @property
    def lifetime(self) -> int:
        return max(self.expires_at - self.issued_at, 1)


class DepositFile(BaseModel):
    """One rendezvous deposit, written by the web-facing authorization helper."""

    user: str
    provider: str
    handle_name: str
    code: str
    client_id: str

    def key(self) -> CredentialKey:
        return CredentialKey(user=self.user, provider=self.provider, handle_name=self.handle_name)


class QuarantineRecord(BaseModel):
    file: str
    reason: str
    detail: str = ""


class TickOutcome(BaseModel):
    key: CredentialKey
    refreshed: bool
    reason: str | None = None


def ensure_untainted(value: Any) -> None:
    """
    Refuse values that carry a refresh handle.

    Args:
        value: Message payload about to leave the submit domain

    Raises:
        TaintViolation: If any nested value is a `SecretStr`
    """
    if isinstance(value, SecretStr):
        raise TaintViolation("refresh handle in a message leaving the submit domain")
    if isinstance(value, BaseModel):
        for name in type(value).model_fields:
            ensure_untainted(getattr(value, name))
    elif isinstance(value, Mapping):
        for item in value.values():
            ensure_untainted(item)
    elif isinstance(value, (list, tuple, set, frozenset)):
        for item in value:
            ensure_untainted(item)
