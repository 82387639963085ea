# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Records held by the token server.

Secrets are never stored in plaintext: client secrets and registration tokens
are kept as salted hashes, refresh handles and grant codes as digests.
"""

import hashlib
import hmac
import secrets

from pydantic import BaseModel, Field, field_serializer, field_validator

from captoken.core.scopes import Scope

WILDCARD_CLIENT = "*"


def digest(value: str) -> str:
    """Unsalted SHA-256, used to key records by high-entropy opaque strings."""
    return hashlib.sha256(value.encode("utf-8")).hexdigest()


def salted_hash(secret: str, salt: bytes | None = None) -> bytes:
    """Return salt || sha256(salt || secret)."""
    salt = salt if salt is not None else secrets.token_bytes(16)
    return salt + hashlib.sha256(salt + secret.encode("utf-8")).digest()


def check_salted_hash(secret: str, stored: bytes) -> bool:
    return hmac.compare_digest(salted_hash(secret, stored[:16]), stored)


class ClientRecord(BaseModel):
    client_id: str
    client_secret_hash: bytes
    display_name: str
    allowed_scopes: list[Scope]
    registration_token_hash: bytes
    created_at: int

    @field_validator("client_secret_hash", "registration_token_hash", mode="before")
    @classmethod
    def _from_hex(cls, value):
        if isinstance(value, str):
            return bytes.fromhex(value)
        return value

    @field_serializer("client_secret_hash", "registration_token_hash", when_used="json")
    def _to_hex(self, value: bytes) -> str:
        return value.hex()

    def public_view(self) -> dict:
        """The record as returned to its owner: no hashes."""
        return self.model_dump(
            mode="json", exclude={"client_secret_hash", "registration_token_hash"}
        )


class PolicyRule(BaseModel):
    """attribute_key == attribute_value grants `grantable_scopes` to `client_id`."""

    client_id: str = WILDCARD_CLIENT
    attribute_key: str
    attribute_value: str
    grantable_scopes: list[Scope] = Field(min_length=1)

    def matches(self, client_id: str | None, attributes: dict[str, str]) -> bool:
        if self.client_id != WILDCARD_CLIENT and self.client_id != client_id:
            return False
        return attributes.get(self.attribute_key) == self.attribute_value


class RefreshTokenRecord(BaseModel):
    """
    Server-side state of one refresh token.

    The record is keyed by the digest of the handle; the handle itself only
    exists in the response to the code exchange.
    """

    handle_digest: str
    user: str
    client_id: str
    granted_scopes: list[Scope]
    issued_at: int
    expires_at: int
    revoked: bool = False


class AuthorizationGrant(BaseModel):
    code_digest: str
    user: str
    client_id: str
    approved_scopes: list[Scope]
    expires_at: int
    consumed: bool = False


class AuditEntry(BaseModel):
    """One minted access token, for attenuation replay."""

    token_id: str
    refresh_digest: str | None
    granted_scopes: list[Scope]
    minted_scopes: list[Scope]
    issued_at: int
