# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Token claims and the issuer discovery document.
"""

from typing import Any

from pydantic import BaseModel, ConfigDict, Field

from captoken.core.keys import JsonWebKey, KeyRecord, find_key
from captoken.core.scopes import Scope, format_scopes, parse_scopes
from captoken.errors import InvalidClaims

PROFILE_VERSION = "captoken:1.0"
AUDIENCE_ANY = "any"
DISCOVERY_PATH = "/.well-known/captoken-configuration"


class TokenClaims(BaseModel):
    """The capability payload of a signed access token."""

    model_config = ConfigDict(frozen=True)

    issuer: str
    subject: str
    audience: list[str]
    scopes: list[Scope]
    issued_at: int
    not_before: int
    expires_at: int
    token_id: str
    origin: str | None = None
    version: str = PROFILE_VERSION

    def check(self, max_lifetime: int | None = None) -> None:
        """
        Enforce the claim invariants.

        Args:
            max_lifetime: Longest allowed expires_at - issued_at, unchecked when None

        Raises:
            InvalidClaims: On the first violated invariant
        """
        if not (self.not_before <= self.issued_at <= self.expires_at):
            raise InvalidClaims("require not_before <= issued_at <= expires_at")
        if max_lifetime is not None and self.expires_at - self.issued_at > max_lifetime:
            raise InvalidClaims(f"lifetime exceeds {max_lifetime}s")
        if not self.scopes:
            raise InvalidClaims("access tokens need at least one scope")
        if not self.audience:
            raise InvalidClaims("audience is empty")
        if not self.token_id:
            raise InvalidClaims("token_id is empty")

    def to_payload(self) -> dict[str, Any]:
        """JWT claim set, registered claim names where they exist."""
        payload: dict[str, Any] = {
            "iss": self.issuer,
            "sub": self.subject,
            "aud": list(self.audience),
            "scope": format_scopes(self.scopes),
            "iat": self.issued_at,
            "nbf": self.not_before,
            "exp": self.expires_at,
            "jti": self.token_id,
            "ver": self.version,
        }
        if self.origin is not None:
            payload["origin"] = self.origin
        return payload

    @classmethod
    def from_payload(cls, payload: dict[str, Any]) -> "TokenClaims":
        audience = payload["aud"]
        if isinstance(audience, str):
            audience = [audience]
        return cls(
            issuer=payload["iss"],
            subject=payload["sub"],
            audience=audience,
            scopes=parse_scopes(payload["scope"]),
            issued_at=payload["iat"],
            not_before=payload["nbf"],
            expires_at=payload["exp"],
            token_id=payload["jti"],
            origin=payload.get("origin"),
            version=payload["ver"],
        )

    def permits_audience(self, audience: str) -> bool:
        return audience in self.audience or AUDIENCE_ANY in self.audience


class IssuerMetadata(BaseModel):
    """Discovery document served at `<issuer>/.well-known/captoken-configuration`."""

    issuer: str
    keys: list[JsonWebKey] = Field(default_factory=list)
    token_endpoint: str
    revocation_endpoint: str
    registration_endpoint: str
    authorization_endpoint: str | None = None

    @classmethod
    def for_issuer(cls, issuer: str, keys: list[KeyRecord]) -> "IssuerMetadata":
        base = issuer.rstrip("/")
        return cls(
            issuer=issuer,
            keys=[key.to_jwk() for key in keys],
            token_endpoint=f"{base}/token",
            revocation_endpoint=f"{base}/revoke",
            registration_endpoint=f"{base}/register",
            authorization_endpoint=f"{base}/authorize",
        )

    def key_records(self) -> list[KeyRecord]:
        return [jwk.to_record() for jwk in self.keys]

    def find_key(self, key_id: str) -> KeyRecord:
        return find_key(self.key_records(), key_id)
