# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Boots one token server, one credential daemon and one data gateway that share
a virtual clock, wired together over HTTP.

In `asgi` mode the services are mounted in-process through httpx's ASGI
transport; in `loopback` mode each HTTP service runs under uvicorn on an
ephemeral 127.0.0.1 port.
"""

import asyncio
import logging
import random
import socket
from contextlib import AsyncExitStack
from enum import Enum
from pathlib import Path

import httpx
import uvicorn
from pydantic import BaseModel, Field
from starlette.applications import Starlette

from captoken.clock import VirtualClock
from captoken.core.keys import key_from_seed
from captoken.core.scopes import Scope, path_segments
from captoken.credd.config import ProviderSettings
from captoken.credd.manager import CredentialManager
from captoken.credd.models import CredentialKey
from captoken.credd.rendezvous import prepare_directory
from captoken.credd.store import CredentialStore
from captoken.gateway.app import create_gateway_app
from captoken.gateway.config import GatewayConfig
from captoken.gateway.service import Gateway
from captoken.gateway.trust import TrustStore
from captoken.server.app import create_issuer_app
from captoken.server.client import IssuerClient
from captoken.server.issuer import TokenServer
from captoken.server.models import PolicyRule
from captoken.server.store import ServerStore
from captoken.sim.models import SIM_PROVIDER, Domain
from captoken.sim.transcript import Transcript

logger = logging.getLogger(__name__)

GATEWAY_URL = "https://data.sim"


class Transport(str, Enum):
    ASGI = "asgi"
    LOOPBACK = "loopback"


class ServiceSettings(BaseModel):
    """`[services]` table of a scenario file."""

    issuer: str = "https://issuer.sim"
    audience: str = "https://data.sim"
    transport: Transport = Transport.ASGI
    access_lifetime: int = Field(default=600, gt=0)
    refresh_lifetime: int = Field(default=86400, gt=0)
    skew: int = Field(default=0, ge=0)
    refresh_margin: float = Field(default=0.2, gt=0, lt=1)
    scope_universe: list[Scope] = Field(
        default_factory=lambda: [Scope.model_validate("read:/"), Scope.model_validate("write:/")]
    )
    execute_nodes: list[str] = Field(default_factory=lambda: ["exec-1"], min_length=1)


class Deployment:
    """
    The three services of one scenario plus the HTTP clients between them.

    Args:
        settings: Service settings
        policy: Initial issuer policy
        workdir: Directory for state, rendezvous and the data sandbox
        clock: Shared virtual clock
        seed: Seed for keys and every random value the issuer draws
    """

    def __init__(
        self,
        settings: ServiceSettings,
        policy: list[PolicyRule],
        workdir: Path,
        clock: VirtualClock,
        seed: int = 0,
    ):
        self.settings = settings
        self.policy = policy
        self.workdir = Path(workdir)
        self.clock = clock
        self.transcript = Transcript(clock)
        self._rng = random.Random(seed)

        self.sandbox = self.workdir / "data"
        self.rendezvous_dir = self.workdir / "rendezvous"
        self.credd_state = self.workdir / "credd"
        self.issuer_url = settings.issuer

        self.server: TokenServer
        self.gateway: Gateway
        self.credd: CredentialManager
        self.provider: ProviderSettings
        # submit-side client used by the schedd for consent
        self.schedd_issuer: IssuerClient
        self.gateway_http: httpx.AsyncClient
        self.restarts = 0
        self._key_generation = 1

        self._stack = AsyncExitStack()
        self._credd_issuer: IssuerClient
        self._servers: list[tuple[uvicorn.Server, asyncio.Task]] = []

    async def __aenter__(self) -> "Deployment":
        await self.start()
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.stop()

    def _entropy(self, nbytes: int) -> bytes:
        return self._rng.randbytes(nbytes)

    async def _loopback(self, app: Starlette) -> str:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        server = uvicorn.Server(uvicorn.Config(app, log_config=None, lifespan="off"))
        task = asyncio.create_task(server.serve(sockets=[sock]))
        while not server.started:
            if task.done():
                task.result()
            await asyncio.sleep(0.01)
        self._servers.append((server, task))
        return f"http://127.0.0.1:{port}"

    def _client(
        self, app: Starlette, base_url: str, hooks: dict[str, list] | None = None
    ) -> httpx.AsyncClient:
        transport = (
            httpx.ASGITransport(app=app) if self.settings.transport is Transport.ASGI else None
        )
        return httpx.AsyncClient(transport=transport, base_url=base_url, event_hooks=hooks)

    async def start(self) -> None:
        self.sandbox.mkdir(parents=True, exist_ok=True)
        prepare_directory(self.rendezvous_dir)

        loopback = self.settings.transport is Transport.LOOPBACK
        self.server = TokenServer(
            issuer=self.issuer_url,
            signing_key=key_from_seed(self._rng.randbytes(32), "sim-1"),
            scope_universe=self.settings.scope_universe,
            policy=self.policy,
            store=ServerStore(self.workdir / "issuer"),
            clock=self.clock,
            access_lifetime=self.settings.access_lifetime,
            refresh_lifetime=self.settings.refresh_lifetime,
            skew=self.settings.skew,
            entropy=self._entropy,
        )
        issuer_app = create_issuer_app(self.server)
        if loopback:
            # nothing is signed before this point, so the issuer can still take its bound URL
            self.server.issuer = self.issuer_url = await self._loopback(issuer_app)

        hooks = self.transcript.http_hooks(Domain.SUBMIT, Domain.SERVER)
        self.schedd_issuer = IssuerClient(
            self.issuer_url,
            await self._stack.enter_async_context(
                self._client(issuer_app, self.issuer_url, hooks)
            ),
        )
        self._credd_issuer = IssuerClient(
            self.issuer_url,
            await self._stack.enter_async_context(
                self._client(issuer_app, self.issuer_url, hooks)
            ),
        )
        trust_client = IssuerClient(
            self.issuer_url,
            await self._stack.enter_async_context(self._client(issuer_app, self.issuer_url)),
        )

        registration = await self._credd_issuer.register_client(
            "credd", self.settings.scope_universe
        )
        self.provider = ProviderSettings(
            issuer=self.issuer_url,
            client_id=registration.client_id,
            client_secret=registration.client_secret,
        )
        self.credd = self._build_credd()

        config = GatewayConfig(
            sandbox_root=self.sandbox,
            service_audience=self.settings.audience,
            trusted_issuers=[self.issuer_url],
            skew=self.settings.skew,
        )
        trust = TrustStore([self.issuer_url], {self.issuer_url: trust_client}, self.clock)
        self.gateway = Gateway(config, trust, self.clock)
        await trust.refresh_trust()

        gateway_app = create_gateway_app(self.gateway)
        gateway_url = await self._loopback(gateway_app) if loopback else GATEWAY_URL
        self.gateway_http = await self._stack.enter_async_context(
            self._client(gateway_app, gateway_url)
        )
        logger.info(
            "Deployment started",
            extra={"issuer": self.issuer_url, "transport": self.settings.transport.value},
        )

    def _build_credd(self) -> CredentialManager:
        return CredentialManager(
            store=CredentialStore(self.credd_state),
            providers={SIM_PROVIDER: self.provider},
            issuers={SIM_PROVIDER: self._credd_issuer},
            clock=self.clock,
            refresh_margin=self.settings.refresh_margin,
        )

    def restart_credd(self) -> int:
        """
        Replace the credential daemon with a fresh one replayed from its journal.

        Returns:
            int: Number of credentials the new daemon replayed
        """
        self.credd = self._build_credd()
        self.restarts += 1
        self.transcript.record(
            Domain.SUBMIT, Domain.SUBMIT, "credd_restart", {"replayed": self.credd.store.replayed}
        )
        logger.info("Credential daemon restarted", extra={"replayed": self.credd.store.replayed})
        return self.credd.store.replayed

    async def revoke(self, key: CredentialKey) -> bool:
        """Revoke the stored refresh handle at the issuer, as its owner would."""
        credential = self.credd.store.get(key)
        if credential is None or credential.refresh_handle is None:
            return False
        assert self.provider.client_id and self.provider.client_secret
        await self._credd_issuer.revoke(
            credential.refresh_handle.get_secret_value(),
            self.provider.client_id,
            self.provider.client_secret,
        )
        return True

    async def expire_keys(self) -> str:
        """
        Rotate the issuer key without keeping the old one, then refresh gateway trust.

        Returns:
            str: Key id of the new signing key
        """
        self._key_generation += 1
        key = key_from_seed(self._rng.randbytes(32), f"sim-{self._key_generation}")
        self.server.rotate_key(key, keep_previous=False)
        await self.gateway.trust.refresh_trust()
        return key.key_id

    def populate(self, files: dict[str, str]) -> None:
        """Write fixture objects into the sandbox, keyed by absolute logical path."""
        for logical, content in files.items():
            target = self.sandbox.joinpath(*path_segments(logical))
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")

    async def stop(self) -> None:
        await self._stack.aclose()
        for server, task in self._servers:
            server.should_exit = True
            await task
        self._servers.clear()
