# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Credential daemon assembly and its background refresher loop.
"""

import asyncio
import logging

from captoken.clock import Clock
from captoken.core.keys import generate_key, load_key
from captoken.credd.config import CreddSettings, ProviderMode
from captoken.credd.control import ControlServer
from captoken.credd.manager import CredentialManager
from captoken.credd.rendezvous import prepare_directory
from captoken.credd.store import CredentialStore
from captoken.errors import CaptokenError
from captoken.server.client import IssuerClient
from captoken.server.issuer import TokenServer

logger = logging.getLogger(__name__)


def build_manager(
    settings: CreddSettings,
    clock: Clock | None = None,
    issuers: dict[str, IssuerClient] | None = None,
) -> CredentialManager:
    """
    Assemble a credential manager from settings.

    Args:
        settings: Daemon settings
        clock: Time source shared with the rest of the deployment
        issuers: Pre-built issuer clients; missing OAuth providers get an HTTP client

    Returns:
        CredentialManager: Manager with its store replayed from the journal
    """
    issuers = dict(issuers or {})
    local_issuers: dict[str, TokenServer] = {}

    for name, provider in settings.providers.items():
        if provider.mode is ProviderMode.LOCAL:
            key = load_key(provider.signing_key) if provider.signing_key else generate_key()
            local_issuers[name] = TokenServer(
                issuer=provider.issuer,
                signing_key=key,
                scope_universe=[s for rule in provider.policy for s in rule.grantable_scopes],
                policy=provider.policy,
                clock=clock,
            )
        elif name not in issuers:
            issuers[name] = IssuerClient(provider.issuer)

    prepare_directory(settings.rendezvous_dir)
    return CredentialManager(
        store=CredentialStore(settings.state_dir),
        providers=settings.providers,
        issuers=issuers,
        local_issuers=local_issuers,
        clock=clock,
        refresh_margin=settings.refresh_margin,
    )


async def refresher_loop(manager: CredentialManager, settings: CreddSettings) -> None:
    """Pick up deposits and refresh near-expiry tokens every tick interval."""
    while True:
        try:
            await manager.rendezvous_pickup(settings.rendezvous_dir)
            refreshed = await manager.refresh_tick()
            if refreshed:
                logger.info("Refresh tick", extra={"refreshed": len(refreshed)})
        except CaptokenError as e:
            logger.error(f"Refresher iteration failed: {e}", extra={"error": e.reason})
        except Exception as e:
            logger.error(f"Refresher iteration failed: {e}", exc_info=True)
        await manager.clock.sleep(settings.tick_interval)


async def serve_credd(settings: CreddSettings) -> None:
    """Run the daemon: control socket plus refresher, until cancelled."""
    manager = build_manager(settings)
    control = ControlServer(manager, settings.rendezvous_dir)
    server = await control.serve(settings.control_socket)

    async with server:
        async with asyncio.TaskGroup() as tg:
            tg.create_task(server.serve_forever())
            tg.create_task(refresher_loop(manager, settings))
