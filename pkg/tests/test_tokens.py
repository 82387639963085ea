# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

import json
import os
import stat
from pathlib import Path

import pytest
from conftest import AUDIENCE, ISSUER, T0

from captoken.core.claims import IssuerMetadata, TokenClaims
from captoken.core.keys import KeyRecord, key_from_seed, load_key, save_key
from captoken.core.tokens import decode_unverified, sign_token, verify_token
from captoken.errors import (
    AudienceMismatch,
    BadSignature,
    ConfigError,
    Expired,
    InvalidClaims,
    Malformed,
    MissingPrivateKey,
    NotYetValid,
    UnknownIssuer,
    UnknownKey,
    VerificationError,
)

VECTORS_FILE = Path(__file__).parent.parent / "vectors" / "tokens.json"
CONFORMANCE = json.loads(VECTORS_FILE.read_text(encoding="utf-8"))
VECTORS = CONFORMANCE["vectors"]
SIGNED_VECTORS = [v for v in VECTORS if v["claims"] is not None and v["key"] is not None]

B64URL = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_"


def vector_key(name: str) -> KeyRecord:
    entry = CONFORMANCE["keys"][name]
    return key_from_seed(bytes.fromhex(entry["seed"]), entry["kid"])


def vector_trust(trusted: dict[str, list[str]]) -> dict[str, IssuerMetadata]:
    return {
        issuer: IssuerMetadata.for_issuer(issuer, [vector_key(name) for name in names])
        for issuer, names in trusted.items()
    }


def tamper(token: str, index: int) -> str:
    """Change one character so that the decoded bits always change."""
    char = token[index]
    if char == ".":
        replacement = "A"
    else:
        replacement = B64URL[B64URL.index(char) ^ 0b100000]
    return token[:index] + replacement + token[index + 1 :]


def test_conformance_file_size():
    assert len(VECTORS) >= 20
    assert len(SIGNED_VECTORS) >= 10


@pytest.mark.parametrize("name", sorted(CONFORMANCE["keys"]))
def test_vector_keys_derive_public_part(name):
    """Test that each seed derives the published public key."""
    assert vector_key(name).to_jwk().x == CONFORMANCE["keys"][name]["x"]


@pytest.mark.parametrize("vector", SIGNED_VECTORS, ids=lambda v: v["name"])
def test_vector_signing_is_byte_exact(vector):
    """Test that signing the vector claims reproduces the committed token."""
    claims = TokenClaims.model_validate(vector["claims"])
    assert sign_token(claims, vector_key(vector["key"])) == vector["expected_compact"]


@pytest.mark.parametrize("vector", VECTORS, ids=lambda v: v["name"])
def test_vector_verification(vector):
    """Test that every vector verifies, or fails with exactly its expected reason."""
    context = vector["verify"]
    arguments = (
        vector["expected_compact"],
        vector_trust(context["trusted"]),
        context["audience"],
        context["now"],
        context["skew"],
    )

    if vector["expected_error"] is None:
        claims = verify_token(*arguments)
        if vector["claims"] is not None:
            assert claims == TokenClaims.model_validate(vector["claims"])
        return

    with pytest.raises(VerificationError) as exc_info:
        verify_token(*arguments)
    assert exc_info.value.reason == vector["expected_error"]


def test_roundtrip(server, mint):
    token = mint(scopes=["read:/ligo", "write:/ligo/out"], origin="exec-1")
    claims = verify_token(token, {ISSUER: server.metadata()}, AUDIENCE, T0 + 1, 0)

    assert claims.subject == "alice"
    assert [str(s) for s in claims.scopes] == ["read:/ligo", "write:/ligo/out"]
    assert claims.origin == "exec-1"
    assert claims.expires_at == T0 + 600


@pytest.mark.parametrize(
    "now, skew, error",
    [
        (T0 - 61, 60, NotYetValid),
        (T0 - 60, 60, None),
        (T0 - 1, 0, NotYetValid),
        (T0, 0, None),
        (T0 + 599, 0, None),
        (T0 + 600, 0, Expired),
        (T0 + 659, 60, None),
        (T0 + 660, 60, Expired),
    ],
)
def test_validity_window_boundaries(server, mint, now, skew, error):
    """Test the validity window edges with and without clock skew."""
    token = mint(issued_at=T0, lifetime=600)
    trusted = {ISSUER: server.metadata()}
    if error is None:
        verify_token(token, trusted, AUDIENCE, now, skew)
    else:
        with pytest.raises(error):
            verify_token(token, trusted, AUDIENCE, now, skew)


def test_verification_order(server, mint):
    """Test that an expired token for the wrong audience reports Expired."""
    token = mint(audience="https://elsewhere.test")
    trusted = {ISSUER: server.metadata()}
    with pytest.raises(AudienceMismatch):
        verify_token(token, trusted, AUDIENCE, T0 + 1, 0)
    with pytest.raises(Expired):
        verify_token(token, trusted, AUDIENCE, T0 + 700, 0)


def test_unknown_issuer_and_key(server, mint):
    other = key_from_seed(b"\x07" * 32, "other")
    with pytest.raises(UnknownIssuer):
        verify_token(mint(issuer="https://rogue.test"), {ISSUER: server.metadata()}, AUDIENCE, T0, 0)
    with pytest.raises(UnknownKey):
        verify_token(mint(key=other), {ISSUER: server.metadata()}, AUDIENCE, T0, 0)


def test_single_character_tamper_never_verifies(server, mint):
    """Test that changing any one character of a token makes verification fail."""
    trusted = {ISSUER: server.metadata()}
    tokens = [
        mint(),
        mint(scopes=["write:/ligo/out"], origin="exec-2", token_id="jti-2"),
        mint(scopes=["read:/", "write:/"], audience="any", token_id="jti-3"),
    ]
    for token in tokens:
        verify_token(token, trusted, AUDIENCE, T0 + 1, 0)
        for index in range(len(token)):
            with pytest.raises(VerificationError):
                verify_token(tamper(token, index), trusted, AUDIENCE, T0 + 1, 0)


def test_decode_unverified(mint):
    header, payload = decode_unverified(mint())
    assert header == {"alg": "EdDSA", "kid": "test-1", "typ": "JWT"}
    assert payload["scope"] == "read:/ligo"
    assert payload["ver"] == "captoken:1.0"

    for garbage in ("", "a.b", "a..c", "not a token at all"):
        with pytest.raises(Malformed):
            decode_unverified(garbage)


def test_sign_requires_private_key(signing_key):
    claims = TokenClaims.model_validate(SIGNED_VECTORS[0]["claims"])
    with pytest.raises(MissingPrivateKey):
        sign_token(claims, signing_key.public())


@pytest.mark.parametrize(
    "update",
    [
        {"not_before": T0 + 10},
        {"expires_at": T0 - 1},
        {"scopes": []},
        {"audience": []},
        {"token_id": ""},
    ],
)
def test_sign_rejects_invalid_claims(signing_key, update):
    claims = TokenClaims.model_validate(SIGNED_VECTORS[0]["claims"] | {"issued_at": T0})
    claims = claims.model_copy(update={"not_before": T0, "expires_at": T0 + 600} | update)
    with pytest.raises(InvalidClaims):
        sign_token(claims, signing_key)


def test_sign_enforces_max_lifetime(signing_key):
    claims = TokenClaims.model_validate(SIGNED_VECTORS[0]["claims"])
    with pytest.raises(InvalidClaims):
        sign_token(claims, signing_key, max_lifetime=60)


def test_key_file_roundtrip(tmp_path, signing_key):
    path = tmp_path / "keys" / "signing.json"
    save_key(signing_key, path)

    assert stat.S_IMODE(os.stat(path).st_mode) == 0o600
    loaded = load_key(path)
    assert loaded == signing_key
    assert "private=present" in repr(loaded)
    assert signing_key.private_part.hex() not in repr(loaded)


def test_key_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_key(tmp_path / "missing.json")

    path = tmp_path / "bad.json"
    path.write_text('{"kid": "x", "alg": "HS256", "x": "AAAA"}')
    with pytest.raises(ConfigError):
        load_key(path)


def test_bad_signature_with_swapped_key(server, mint):
    impostor = key_from_seed(b"\x09" * 32, server.active_key.key_id)
    with pytest.raises(BadSignature):
        verify_token(mint(key=impostor), {ISSUER: server.metadata()}, AUDIENCE, T0, 0)
