# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

import os
import random

import httpx
import pytest
import pytest_asyncio
from conftest import AUDIENCE, ISSUER, T0

from captoken.core.claims import IssuerMetadata
from captoken.core.enforce import DenyReason, enforce
from captoken.core.keys import key_from_seed
from captoken.core.scopes import Operation, path_segments
from captoken.core.tokens import verify_token
from captoken.errors import (
    AccessDenied,
    BadPath,
    CaptokenError,
    Expired,
    Malformed,
    ObjectNotFound,
    ObjectTooLarge,
    UnknownIssuer,
    UnknownKey,
    VerificationError,
)
from captoken.gateway.app import create_gateway_app
from captoken.gateway.config import GatewayConfig
from captoken.gateway.service import Gateway, bearer_token
from captoken.gateway.trust import TrustStore
from captoken.server.client import IssuerClient


@pytest_asyncio.fixture
async def gateway_http(gateway):
    transport = httpx.ASGITransport(app=create_gateway_app(gateway))
    async with httpx.AsyncClient(transport=transport, base_url=AUDIENCE) as http:
        yield http


def auth(token: str) -> dict[str, str]:
    return {"Authorization": f"Bearer {token}"}


# reads and writes


@pytest.mark.asyncio
async def test_read(gateway, mint):
    assert await gateway.handle_read("/ligo/frames/f1", mint()) == b"frame one"
    assert await gateway.handle_read("ligo//frames/f1", mint()) == b"frame one"

    with pytest.raises(ObjectNotFound):
        await gateway.handle_read("/ligo/frames/missing", mint())
    with pytest.raises(AccessDenied) as exc_info:
        await gateway.handle_read("/virgo/v1", mint())
    assert exc_info.value.reason == "NoMatchingScope"


@pytest.mark.asyncio
async def test_verification_precedes_file_access(gateway, mint):
    """Test that a bad token reports 401 whether or not the object exists."""
    expired = mint(issued_at=T0 - 1000)
    for path in ("/ligo/frames/f1", "/ligo/frames/missing"):
        with pytest.raises(Expired):
            await gateway.handle_read(path, expired)
        with pytest.raises(Malformed):
            await gateway.handle_read(path, "garbage")


@pytest.mark.asyncio
async def test_every_refused_request_leaves_files_untouched(gateway, mint, monkeypatch):
    """Test that the filesystem is never read for a request that is refused."""
    reads: list = []
    original = gateway._read_file

    async def spy(target):
        reads.append(target)
        return await original(target)

    monkeypatch.setattr(gateway, "_read_file", spy)
    refused = [
        ("/ligo/frames/f1", "not.a.token"),
        ("/ligo/frames/f1", mint(audience="https://elsewhere.test")),
        ("/ligo/frames/f1", mint(issued_at=T0 + 100)),
        ("/ligo/frames/f1", mint(issuer="https://rogue.test")),
        ("/ligo/frames/f1", mint(origin="exec-9")),
        ("/virgo/v1", mint()),
        ("/ligo/../virgo/v1", mint()),
        ("/ligo/%2e%2e/virgo/v1", mint()),
        ("/ligo/frames/f1", mint(scopes=["write:/ligo"])),
    ]
    for path, token in refused:
        with pytest.raises(CaptokenError):
            await gateway.handle_read(path, token)
    assert reads == []

    await gateway.handle_read("/ligo/frames/f1", mint())
    assert len(reads) == 1


@pytest.mark.asyncio
async def test_write(gateway, mint, sandbox):
    token = mint(scopes=["write:/ligo/out"])

    assert await gateway.handle_write("/ligo/out/run1/result", b"42", token) == "/ligo/out/run1/result"
    assert (sandbox / "ligo" / "out" / "run1" / "result").read_bytes() == b"42"

    await gateway.handle_write("/ligo/out/run1/result", b"43", token)
    assert (sandbox / "ligo" / "out" / "run1" / "result").read_bytes() == b"43"

    with pytest.raises(AccessDenied):
        await gateway.handle_write("/ligo/frames/f1", b"x", token)
    assert (sandbox / "ligo" / "frames" / "f1").read_bytes() == b"frame one"


@pytest.mark.asyncio
async def test_interrupted_write_leaves_no_partial_object(gateway, mint, sandbox, monkeypatch):
    token = mint(scopes=["write:/ligo"])
    target = sandbox / "ligo" / "frames" / "f1"

    def crash(temp, final):
        raise OSError("disk pulled")

    monkeypatch.setattr(gateway, "_publish", crash)
    with pytest.raises(OSError):
        await gateway.handle_write("/ligo/frames/f1", b"half written", token)
    with pytest.raises(OSError):
        await gateway.handle_write("/ligo/frames/new", b"half written", token)

    assert target.read_bytes() == b"frame one"
    assert not (sandbox / "ligo" / "frames" / "new").exists()
    assert sorted(os.listdir(target.parent)) == ["f1"]


@pytest.mark.asyncio
async def test_write_size_limit_and_ordering(sandbox, server, clock, mint):
    config = GatewayConfig(
        sandbox_root=sandbox, service_audience=AUDIENCE, trusted_issuers=[ISSUER], max_object_bytes=4
    )
    trust = TrustStore([ISSUER], clock=clock)
    trust.seed(server.metadata())
    gateway = Gateway(config, trust, clock)
    big = b"12345"

    with pytest.raises(Malformed):
        await gateway.handle_write("/ligo/out/x", big, "garbage")
    with pytest.raises(AccessDenied):
        await gateway.handle_write("/ligo/out/x", big, mint(scopes=["read:/ligo"]))
    with pytest.raises(ObjectTooLarge):
        await gateway.handle_write("/ligo/out/x", big, mint(scopes=["write:/ligo/out"]))
    with pytest.raises(BadPath):
        await gateway.handle_write("/ligo/out/../x", big, "garbage")

    await gateway.handle_write("/ligo/out/x", big[:4], mint(scopes=["write:/ligo/out"]))
    assert (sandbox / "ligo" / "out" / "x").read_bytes() == b"1234"


# path resolution


@pytest.mark.parametrize(
    "raw, logical",
    [
        ("/ligo/frames/f1", "/ligo/frames/f1"),
        ("ligo/frames/f1", "/ligo/frames/f1"),
        ("/ligo//frames/", "/ligo/frames"),
        ("/ligo/%66rames", "/ligo/frames"),
        ("/ligo%2Fframes", "/ligo/frames"),
        ("/ligo/%252e%252e", "/ligo/%2e%2e"),
    ],
)
def test_resolve(gateway, sandbox, raw, logical):
    resolved, target = gateway.resolve(raw)
    assert resolved == logical
    assert target == sandbox.resolve().joinpath(*path_segments(logical))


@pytest.mark.parametrize(
    "raw",
    ["/", "", "/..", "/ligo/../virgo", "/ligo/%2e%2e/virgo", "/ligo/%2E%2E", "/ligo/.", "/a/%00", "/%ff"],
)
def test_resolve_rejects(gateway, raw):
    with pytest.raises(BadPath):
        gateway.resolve(raw)


def test_resolve_rejects_symlink_escape(gateway, sandbox, tmp_path):
    outside = tmp_path / "outside"
    outside.mkdir()
    (outside / "secret").write_bytes(b"secret")
    (sandbox / "ligo" / "escape").symlink_to(outside)

    with pytest.raises(BadPath):
        gateway.resolve("/ligo/escape/secret")


def test_random_paths_never_escape(gateway, sandbox):
    """Test 500 random request paths: each is refused or lands inside the sandbox."""
    rng = random.Random(7)
    pieces = ["ligo", "frames", "f1", "..", ".", "%2e%2e", "%2E.", "%2f", "", "%00", "%252e", "x y", "%"]
    root = sandbox.resolve()

    for _ in range(500):
        raw = "/" + "/".join(rng.choice(pieces) for _ in range(rng.randint(1, 6)))
        try:
            logical, target = gateway.resolve(raw)
        except BadPath:
            continue
        assert target.is_relative_to(root) and target != root, raw
        assert not {".", ".."} & set(logical.split("/")), raw


# gateway and enforce agree


def test_authorize_matches_enforce(gateway, mint, server):
    """Test 1000 random requests: the gateway decides exactly as enforce does."""
    rng = random.Random(1234)
    scope_pool = ["read:/ligo", "read:/ligo/frames", "write:/ligo/out", "read:/", "write:/virgo/a"]
    path_pool = ["/ligo", "/ligo/frames/f1", "/ligo/out/r", "/virgo", "/virgo/a/b", "/ligox"]
    origin_pool = [None, "exec-1", "exec-2"]
    trusted = {ISSUER: server.metadata()}

    for case in range(1000):
        token = mint(
            scopes=rng.sample(scope_pool, rng.randint(1, 3)),
            origin=rng.choice(origin_pool),
            token_id=f"jti-{case}",
        )
        operation = rng.choice(list(Operation))
        path = rng.choice(path_pool)
        origin = rng.choice(origin_pool)

        expected = enforce(verify_token(token, trusted, AUDIENCE, T0, 0), operation, path, origin)
        try:
            gateway.authorize(operation, path, token, origin)
        except AccessDenied as e:
            assert not expected.allowed, case
            assert e.reason == expected.reason.value, case
        else:
            assert expected.allowed, case


@pytest.mark.asyncio
async def test_origin_bound_token_replay(gateway, mint):
    """Test that a token bound to one execution node is useless on any other."""
    token = mint(origin="exec-1")
    assert await gateway.handle_read("/ligo/frames/f1", token, "exec-1") == b"frame one"

    rng = random.Random(99)
    for _ in range(100):
        origin = rng.choice([None, "exec-2", "exec-10", "EXEC-1", "exec-1 ", f"node-{rng.randint(0, 999)}"])
        with pytest.raises(AccessDenied) as exc_info:
            await gateway.handle_read("/ligo/frames/f1", token, origin)
        assert exc_info.value.reason == DenyReason.ORIGIN_MISMATCH.value


# trust


@pytest.mark.asyncio
async def test_trust_follows_key_rotation(gateway, server, mint):
    old = mint()
    server.rotate_key(key_from_seed(b"\x05" * 32, "test-2"))
    new = mint(token_id="after-rotation")

    with pytest.raises(UnknownKey):
        await gateway.handle_read("/ligo/frames/f1", new)

    status = await gateway.trust.refresh_trust()
    assert status[ISSUER].key_ids == ["test-2", "test-1"]
    assert await gateway.handle_read("/ligo/frames/f1", new) == b"frame one"
    assert await gateway.handle_read("/ligo/frames/f1", old) == b"frame one"


@pytest.mark.asyncio
async def test_unreachable_issuer_keeps_previous_keys(server, clock, mint):
    def refuse(request: httpx.Request) -> httpx.Response:
        raise httpx.ConnectError("connection refused", request=request)

    async with httpx.AsyncClient(transport=httpx.MockTransport(refuse)) as http:
        trust = TrustStore([ISSUER], {ISSUER: IssuerClient(ISSUER, http)}, clock)
        trust.seed(server.metadata())
        clock.advance(10)

        status = await trust.refresh_trust()
        assert status[ISSUER].last_error == "IssuerUnavailable"
        assert status[ISSUER].stale_since == T0 + 10
        assert status[ISSUER].key_ids == ["test-1"]

        clock.advance(10)
        status = await trust.refresh_trust()
        assert status[ISSUER].stale_since == T0 + 10

    verify_token(mint(), trust.trusted(), AUDIENCE, clock.now(), 0)


@pytest.mark.asyncio
async def test_discovery_for_wrong_issuer_is_rejected(server, clock):
    impostor = IssuerMetadata.for_issuer("https://rogue.test", server.published_keys())

    def serve(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json=impostor.model_dump(mode="json"))

    async with httpx.AsyncClient(transport=httpx.MockTransport(serve)) as http:
        trust = TrustStore([ISSUER], {ISSUER: IssuerClient(ISSUER, http)}, clock)
        status = await trust.refresh_trust()

    assert status[ISSUER].last_error == "CaptokenError"
    assert trust.trusted() == {}
    with pytest.raises(CaptokenError):
        trust.seed(impostor)


@pytest.mark.asyncio
async def test_untrusted_issuer_token(gateway, mint):
    with pytest.raises(UnknownIssuer):
        await gateway.handle_read("/ligo/frames/f1", mint(issuer="https://rogue.test"))


def test_bearer_token():
    assert bearer_token("Bearer abc") == "abc"
    assert bearer_token("bearer  abc ") == "abc"
    for header in (None, "", "Basic abc", "Bearer", "Bearer   "):
        with pytest.raises(Malformed):
            bearer_token(header)


# HTTP


@pytest.mark.asyncio
async def test_http_read_and_write(gateway_http, mint, sandbox):
    response = await gateway_http.get("/ligo/frames/f1", headers=auth(mint()))
    assert response.status_code == 200
    assert response.content == b"frame one"

    token = mint(scopes=["write:/ligo/out"], origin="exec-1")
    response = await gateway_http.put(
        "/ligo/out/r1", content=b"result", headers=auth(token) | {"X-Exec-Origin": "exec-1"}
    )
    assert response.status_code == 201
    assert response.json() == {"path": "/ligo/out/r1"}
    assert (sandbox / "ligo" / "out" / "r1").read_bytes() == b"result"


@pytest.mark.asyncio
@pytest.mark.parametrize(
    "path, headers, status, reason",
    [
        ("/ligo/frames/f1", {}, 401, "Malformed"),
        ("/ligo/%2e%2e/virgo/v1", {}, 400, "BadPath"),
        ("/virgo/v1", None, 403, "NoMatchingScope"),
        ("/ligo/frames/nope", None, 404, "ObjectNotFound"),
    ],
)
async def test_http_error_statuses(gateway_http, mint, path, headers, status, reason):
    response = await gateway_http.get(path, headers=auth(mint()) if headers is None else headers)

    assert response.status_code == status
    assert response.headers["X-Authz-Reason"] == reason
    assert response.json()["error"] == reason
    if status == 401:
        assert 'error="invalid_token"' in response.headers["WWW-Authenticate"]
    else:
        assert "WWW-Authenticate" not in response.headers


@pytest.mark.asyncio
async def test_http_origin_header(gateway_http, mint):
    token = mint(origin="exec-1")
    response = await gateway_http.get("/ligo/frames/f1", headers=auth(token))
    assert response.status_code == 403
    assert response.headers["X-Authz-Reason"] == "OriginMismatch"

    response = await gateway_http.get(
        "/ligo/frames/f1", headers=auth(token) | {"X-Exec-Origin": "exec-1"}
    )
    assert response.status_code == 200


@pytest.mark.asyncio
async def test_http_rejects_declared_oversize(gateway_http, gateway, mint):
    gateway.config.max_object_bytes = 3
    response = await gateway_http.put(
        "/ligo/out/big", content=b"four", headers=auth(mint(scopes=["write:/ligo/out"]))
    )
    assert response.status_code == 413
    assert response.headers["X-Authz-Reason"] == "ObjectTooLarge"

    response = await gateway_http.put("/ligo/out/big", content=b"four")
    assert response.status_code == 401


@pytest.mark.asyncio
async def test_http_streamed_oversize_stops_reading(gateway_http, gateway, mint, sandbox):
    gateway.config.max_object_bytes = 10
    sent = []

    async def chunks():
        for n in range(100):
            sent.append(n)
            yield b"xxxx"

    response = await gateway_http.put(
        "/ligo/out/big", content=chunks(), headers=auth(mint(scopes=["write:/ligo/out"]))
    )
    assert response.status_code == 413
    assert response.headers["X-Authz-Reason"] == "ObjectTooLarge"
    assert len(sent) < 100
    assert not (sandbox / "ligo" / "out" / "big").exists()

    sent.clear()
    response = await gateway_http.put(
        "/ligo/out/big", content=chunks(), headers=auth(mint(scopes=["read:/ligo"]))
    )
    assert response.status_code == 403
    assert len(sent) < 100

    async def small():
        yield b"12345"
        yield b"67890"

    response = await gateway_http.put(
        "/ligo/out/ok", content=small(), headers=auth(mint(scopes=["write:/ligo/out"]))
    )
    assert response.status_code == 201
    assert (sandbox / "ligo" / "out" / "ok").read_bytes() == b"1234567890"


def test_verification_errors_are_401():
    assert all(
        cls.status == 401 for cls in (Malformed, Expired, UnknownIssuer, UnknownKey, VerificationError)
    )
