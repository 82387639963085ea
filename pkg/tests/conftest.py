# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path

import httpx
import pytest
import pytest_asyncio

from captoken.clock import VirtualClock
from captoken.core.claims import TokenClaims
from captoken.core.keys import KeyRecord, key_from_seed
from captoken.core.scopes import Scope, parse_scope
from captoken.core.tokens import sign_token
from captoken.credd.config import ProviderSettings
from captoken.credd.manager import CredentialManager
from captoken.credd.models import DepositFile
from captoken.credd.rendezvous import deposit, prepare_directory
from captoken.credd.store import CredentialStore
from captoken.gateway.config import GatewayConfig
from captoken.gateway.service import Gateway
from captoken.gateway.trust import TrustStore
from captoken.server.app import create_issuer_app
from captoken.server.client import IssuerClient
from captoken.server.issuer import ClientRegistration, TokenServer
from captoken.server.models import PolicyRule
from captoken.server.store import ServerStore

logger = logging.getLogger(__name__)

# Test configuration
T0 = 1_700_000_000
ISSUER = "https://issuer.test"
AUDIENCE = "https://data.test"
LIGO_ATTRIBUTES = {"group": "ligo"}
UNIVERSE = [parse_scope("read:/"), parse_scope("write:/")]
PROVIDER = "test"


@pytest.fixture
def clock() -> VirtualClock:
    """A virtual clock nobody participates in: sleep() and advance() move it directly."""
    return VirtualClock(T0)


@pytest.fixture
def signing_key() -> KeyRecord:
    return key_from_seed(bytes(range(32)), "test-1")


@pytest.fixture
def policy() -> list[PolicyRule]:
    return [
        PolicyRule(
            attribute_key="group",
            attribute_value="ligo",
            grantable_scopes=[parse_scope("read:/ligo"), parse_scope("write:/ligo/out")],
        ),
        PolicyRule(
            attribute_key="project",
            attribute_value="ligo",
            grantable_scopes=[parse_scope("read:/ligo/frames")],
        ),
    ]


@pytest.fixture
def server(tmp_path, clock, signing_key, policy) -> TokenServer:
    """Token server with journals under the test's temporary directory."""
    return TokenServer(
        issuer=ISSUER,
        signing_key=signing_key,
        scope_universe=UNIVERSE,
        policy=policy,
        store=ServerStore(tmp_path / "issuer"),
        clock=clock,
        access_lifetime=600,
        refresh_lifetime=86400,
        skew=0,
    )


@pytest_asyncio.fixture
async def issuer_http(server):
    """HTTP client mounted on the token server app in-process."""
    transport = httpx.ASGITransport(app=create_issuer_app(server))
    async with httpx.AsyncClient(transport=transport, base_url=ISSUER) as http:
        yield http


@pytest_asyncio.fixture
async def issuer_client(issuer_http) -> IssuerClient:
    return IssuerClient(ISSUER, issuer_http)


@pytest.fixture
def mint(server, clock):
    """
    Factory for signed access tokens.

    Defaults to a 600s read token for /ligo issued now by the test server.
    """

    def _mint(
        scopes: list[str] | tuple[str, ...] = ("read:/ligo",),
        audience: str = AUDIENCE,
        origin: str | None = None,
        lifetime: int = 600,
        issued_at: int | None = None,
        key: KeyRecord | None = None,
        issuer: str = ISSUER,
        token_id: str = "jti-test",
    ) -> str:
        issued_at = clock.now() if issued_at is None else issued_at
        claims = TokenClaims(
            issuer=issuer,
            subject="alice",
            audience=[audience],
            scopes=[parse_scope(s) if isinstance(s, str) else s for s in scopes],
            issued_at=issued_at,
            not_before=issued_at,
            expires_at=issued_at + lifetime,
            token_id=token_id,
            origin=origin,
        )
        return sign_token(claims, key or server.active_key)

    return _mint


@pytest.fixture
def sandbox(tmp_path) -> Path:
    """Data sandbox holding a couple of fixture objects."""
    root = tmp_path / "data"
    (root / "ligo" / "frames").mkdir(parents=True)
    (root / "ligo" / "frames" / "f1").write_bytes(b"frame one")
    (root / "virgo").mkdir()
    (root / "virgo" / "v1").write_bytes(b"virgo one")
    return root


@pytest_asyncio.fixture
async def gateway(sandbox, server, clock, issuer_client) -> Gateway:
    """Gateway trusting the test server, with trust fetched over HTTP."""
    config = GatewayConfig(
        sandbox_root=sandbox,
        service_audience=AUDIENCE,
        trusted_issuers=[ISSUER],
        skew=0,
    )
    trust = TrustStore([ISSUER], {ISSUER: issuer_client}, clock)
    await trust.refresh_trust()
    return Gateway(config, trust, clock)


def scopes(*texts: str) -> list[Scope]:
    return [parse_scope(text) for text in texts]


@pytest_asyncio.fixture
async def daemon_client(issuer_client) -> ClientRegistration:
    """The credential daemon's own client registration at the test server."""
    return await issuer_client.register_client("credd", UNIVERSE)


@pytest.fixture
def rendezvous(tmp_path) -> Path:
    return prepare_directory(tmp_path / "rendezvous")


@pytest.fixture
def manager(tmp_path, clock, issuer_client, daemon_client) -> CredentialManager:
    provider = ProviderSettings(
        issuer=ISSUER,
        client_id=daemon_client.client_id,
        client_secret=daemon_client.client_secret,
    )
    return CredentialManager(
        store=CredentialStore(tmp_path / "credd"),
        providers={PROVIDER: provider},
        issuers={PROVIDER: issuer_client},
        clock=clock,
    )


async def consent(
    issuer_client: IssuerClient,
    daemon_client: ClientRegistration,
    rendezvous: Path,
    user: str = "alice",
    handle_name: str = "default",
    requested: tuple[str, ...] = ("read:/ligo", "write:/ligo/out"),
) -> Path:
    """Approve scopes for the daemon's client and drop the code into the rendezvous."""
    grant = await issuer_client.authorize(
        user, LIGO_ATTRIBUTES, daemon_client.client_id, scopes(*requested)
    )
    return deposit(
        rendezvous,
        DepositFile(
            user=user,
            provider=PROVIDER,
            handle_name=handle_name,
            code=grant.code,
            client_id=daemon_client.client_id,
        ),
    )
