# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Signing and verification of compact capability tokens.

Verification runs a fixed sequence of checks and raises the first failure:
structure, issuer trust, key lookup, signature, validity window, audience.
"""

import json
import logging
from collections.abc import Mapping
from typing import Any

import jwt
from jwt.exceptions import DecodeError, InvalidAlgorithmError, InvalidSignatureError
from jwt.utils import base64url_decode
from pydantic import ValidationError

from captoken.core.claims import PROFILE_VERSION, IssuerMetadata, TokenClaims
from captoken.core.keys import SUPPORTED_ALGORITHMS, KeyRecord
from captoken.errors import (
    AudienceMismatch,
    BadSignature,
    CaptokenError,
    Expired,
    Malformed,
    NotYetValid,
    UnknownIssuer,
    UnknownKey,
)

logger = logging.getLogger(__name__)

DEFAULT_SKEW = 60

_jws = jwt.PyJWS()


def sign_token(claims: TokenClaims, key: KeyRecord, max_lifetime: int | None = None) -> str:
    """
    Sign claims into a compact `header.payload.signature` token.

    Args:
        claims: The claims to sign
        key: Signing key, must carry its private part
        max_lifetime: Optional ceiling on expires_at - issued_at

    Returns:
        str: Compact serialization, base64url segments without padding

    Raises:
        MissingPrivateKey: If the key has no private part
        InvalidClaims: If the claims violate their invariants
    """
    claims.check(max_lifetime)
    signing_key = key.signing_key()
    return jwt.encode(
        claims.to_payload(),
        signing_key,
        algorithm=key.algorithm,
        headers={"kid": key.key_id, "typ": "JWT"},
    )


def _segment_json(segment: str, what: str) -> dict[str, Any]:
    try:
        value = json.loads(base64url_decode(segment.encode("ascii")))
    except (ValueError, UnicodeError) as e:
        raise Malformed(f"{what} is not base64url JSON") from e
    if not isinstance(value, dict):
        raise Malformed(f"{what} is not a JSON object")
    return value


def decode_unverified(token: str) -> tuple[dict[str, Any], dict[str, Any]]:
    """
    Decode header and payload without any verification.

    Only for inspection and for picking the issuer and key to verify against.

    Raises:
        Malformed: If the token is not three base64url JSON segments
    """
    parts = token.strip().split(".")
    if len(parts) != 3 or not all(parts):
        raise Malformed("token must have three non-empty dot-separated segments")
    return _segment_json(parts[0], "header"), _segment_json(parts[1], "payload")


def verify_token(
    token: str,
    trusted_issuers: Mapping[str, IssuerMetadata],
    expected_audience: str,
    now: int,
    skew: int = DEFAULT_SKEW,
) -> TokenClaims:
    """
    Verify a token and return its claims.

    Args:
        token: Compact token
        trusted_issuers: issuer -> discovery document
        expected_audience: The verifying service's audience
        now: Current time in seconds since the epoch
        skew: Tolerated clock skew in seconds

    Returns:
        TokenClaims: Claims of a token that passed every check

    Raises:
        VerificationError: The subclass naming the first failed check
    """
    header, payload = decode_unverified(token)

    algorithm = header.get("alg")
    if algorithm not in SUPPORTED_ALGORITHMS:
        raise Malformed(f"algorithm {algorithm!r} is not accepted")
    issuer = payload.get("iss")
    if not isinstance(issuer, str):
        raise Malformed("missing issuer")

    metadata = trusted_issuers.get(issuer)
    if metadata is None:
        raise UnknownIssuer(f"issuer {issuer!r} is not trusted")

    key_id = header.get("kid")
    if not isinstance(key_id, str):
        raise UnknownKey("header carries no key id")
    key = metadata.find_key(key_id)

    try:
        verified = _jws.decode(token, key=key.verifying_key(), algorithms=[key.algorithm])
    except (InvalidSignatureError, InvalidAlgorithmError) as e:
        raise BadSignature(str(e)) from e
    except DecodeError as e:
        raise Malformed(str(e)) from e

    try:
        claims = TokenClaims.from_payload(json.loads(verified))
    except (KeyError, TypeError, ValueError, ValidationError, CaptokenError) as e:
        raise Malformed(f"claims do not parse: {e}") from e
    if claims.version.split(".")[0] != PROFILE_VERSION.split(".")[0]:
        raise Malformed(f"unsupported profile version {claims.version!r}")

    if now < claims.not_before - skew:
        raise NotYetValid(f"not valid before {claims.not_before}")
    if now >= claims.expires_at + skew:
        raise Expired(f"expired at {claims.expires_at}")

    if not claims.permits_audience(expected_audience):
        raise AudienceMismatch(f"audience {expected_audience!r} not in {claims.audience}")

    logger.debug("Token verified", extra={"jti": claims.token_id, "sub": claims.subject})
    return claims
