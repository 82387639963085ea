# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

import random

import pytest

from captoken.core.claims import TokenClaims
from captoken.core.enforce import Decision, DenyReason, enforce
from captoken.core.scopes import Operation, parse_scope, parse_scopes, scope_permits


def claims_with(scopes: str, origin: str | None = None) -> TokenClaims:
    return TokenClaims(
        issuer="https://issuer.test",
        subject="alice",
        audience=["any"],
        scopes=parse_scopes(scopes),
        issued_at=0,
        not_before=0,
        expires_at=600,
        token_id="t",
        origin=origin,
    )


@pytest.mark.parametrize(
    "operation, path",
    [
        ("read", "/ligo"),
        ("read", "/ligo/frames/f1"),
        ("read", "//ligo//frames/"),
        (Operation.WRITE, "/ligo/out/result.dat"),
    ],
)
def test_allowed(operation, path):
    decision = enforce(claims_with("read:/ligo write:/ligo/out"), operation, path)
    assert decision == Decision.allow()


@pytest.mark.parametrize(
    "operation, path, reason",
    [
        ("read", "/ligox", DenyReason.NO_MATCHING_SCOPE),
        ("read", "/virgo", DenyReason.NO_MATCHING_SCOPE),
        ("write", "/ligo/frames", DenyReason.NO_MATCHING_SCOPE),
        ("read", "/ligo/../virgo", DenyReason.BAD_PATH),
        ("read", "ligo", DenyReason.BAD_PATH),
        ("read", "/ligo/./frames", DenyReason.BAD_PATH),
    ],
)
def test_denied(operation, path, reason):
    decision = enforce(claims_with("read:/ligo write:/ligo/out"), operation, path)
    assert not decision.allowed
    assert decision.reason is reason


def test_origin_binding():
    claims = claims_with("read:/ligo", origin="exec-1")

    assert enforce(claims, "read", "/ligo/f1", "exec-1").allowed
    assert enforce(claims, "read", "/ligo/f1", "exec-2").reason is DenyReason.ORIGIN_MISMATCH
    assert enforce(claims, "read", "/ligo/f1", None).reason is DenyReason.ORIGIN_MISMATCH


def test_unbound_token_ignores_origin():
    claims = claims_with("read:/ligo")
    assert enforce(claims, "read", "/ligo/f1", "anywhere").allowed
    assert enforce(claims, "read", "/ligo/f1", None).allowed


def test_check_precedence():
    """Test path, then origin, then scope."""
    claims = claims_with("read:/ligo", origin="exec-1")
    assert enforce(claims, "read", "/virgo/../x", "exec-2").reason is DenyReason.BAD_PATH
    assert enforce(claims, "read", "/virgo", "exec-2").reason is DenyReason.ORIGIN_MISMATCH
    assert enforce(claims, "read", "/virgo", "exec-1").reason is DenyReason.NO_MATCHING_SCOPE


def test_unknown_operation_raises():
    with pytest.raises(ValueError):
        enforce(claims_with("read:/ligo"), "delete", "/ligo")


def random_path(rng: random.Random) -> str:
    return "/" + "/".join(rng.choice(["a", "ab", "b"]) for _ in range(rng.randint(0, 3)))


def expected_allowed(granted: list[str], operation: str, path: str, token_origin, origin) -> bool:
    if token_origin is not None and token_origin != origin:
        return False
    wanted = [segment for segment in path.split("/") if segment]
    for scope in granted:
        op, _, prefix = scope.partition(":")
        segments = [segment for segment in prefix.split("/") if segment]
        if op == operation and wanted[: len(segments)] == segments:
            return True
    return False


@pytest.mark.parametrize("seed", range(5))
def test_random_requests_match_segment_prefix_rule(seed):
    rng = random.Random(seed)
    for _ in range(400):
        granted = [
            f"{rng.choice(['read', 'write'])}:{random_path(rng)}" for _ in range(rng.randint(1, 3))
        ]
        token_origin = rng.choice([None, "exec-1"])
        origin = rng.choice([None, "exec-1", "exec-2"])
        operation = rng.choice(["read", "write"])
        path = random_path(rng)
        claims = claims_with(" ".join(granted), origin=token_origin)

        decision = enforce(claims, operation, path, origin)

        expected = expected_allowed(granted, operation, path, token_origin, origin)
        assert decision.allowed is expected, (granted, operation, path, token_origin, origin)
        if decision.reason is not DenyReason.ORIGIN_MISMATCH:
            requested = parse_scope(f"{operation}:{path}")
            assert any(scope_permits(g, requested) for g in claims.scopes) is expected
