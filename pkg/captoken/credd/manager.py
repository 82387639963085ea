# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
The submit-domain credential manager.

Holds refresh handles, turns rendezvous deposits into stored credentials, and
mints, caches and proactively refreshes access tokens for jobs. Refresh
handles never leave this object except on the way to their own issuer.
"""

import asyncio
import logging
from pathlib import Path

from pydantic import SecretStr

from captoken.clock import Clock, SystemClock
from captoken.core.scopes import Scope, dedupe, parse_scopes
from captoken.core.tokens import decode_unverified
from captoken.credd.config import DEFAULT_REFRESH_MARGIN, ProviderMode, ProviderSettings
from captoken.credd.models import (
    CachedAccessToken,
    CredentialKey,
    DepositFile,
    QuarantineRecord,
    StoredCredential,
    TickOutcome,
)
from captoken.credd.rendezvous import pending_deposits, quarantine
from captoken.credd.store import CredentialStore
from captoken.errors import (
    CaptokenError,
    ConfigError,
    NoMatchingPolicy,
    UnknownCredential,
)
from captoken.helpers import register_secret
from captoken.server.client import IssuerClient
from captoken.server.issuer import TokenServer

logger = logging.getLogger(__name__)

CacheKey = tuple[CredentialKey, frozenset[Scope], str, str | None]


class CredentialManager:
    """
    Refresh-token custodian and access-token cache.

    Args:
        store: Persistent credential store
        providers: provider label -> settings
        issuers: provider label -> issuer client, for OAuth providers
        local_issuers: provider label -> local token server, for Local Mode providers
        clock: Time source
        refresh_margin: Fraction of lifetime below which `refresh_tick` re-mints
    """

    def __init__(
        self,
        store: CredentialStore,
        providers: dict[str, ProviderSettings],
        issuers: dict[str, IssuerClient] | None = None,
        local_issuers: dict[str, TokenServer] | None = None,
        clock: Clock | None = None,
        refresh_margin: float = DEFAULT_REFRESH_MARGIN,
    ):
        self.store = store
        self.providers = providers
        self.issuers = issuers or {}
        self.local_issuers = local_issuers or {}
        self.clock = clock if clock is not None else SystemClock()
        self.refresh_margin = refresh_margin

        self.degraded: dict[CredentialKey, str] = {}
        self.quarantined: list[QuarantineRecord] = []
        self.last_tick: list[TickOutcome] = []
        self.server_calls = 0

        self._cache: dict[CacheKey, CachedAccessToken] = {}
        # last get_access for each cache entry; entries idle for a lifetime are evicted
        self._last_used: dict[CacheKey, int] = {}
        # in-flight mints, with the credential each one was started from
        self._inflight: dict[
            CacheKey, tuple[StoredCredential, asyncio.Task[CachedAccessToken]]
        ] = {}
        self._pickup_lock = asyncio.Lock()

    def _provider(self, name: str) -> ProviderSettings:
        provider = self.providers.get(name)
        if provider is None:
            raise ConfigError(f"unknown provider {name!r}")
        return provider

    def _issuer(self, name: str) -> IssuerClient:
        client = self.issuers.get(name)
        if client is None:
            raise ConfigError(f"no issuer client for provider {name!r}")
        return client

    # rendezvous

    async def rendezvous_pickup(self, directory: Path) -> list[StoredCredential]:
        """
        Exchange every deposited code for a stored credential.

        Each deposit ends up either exchanged-and-deleted or quarantined with
        its failure reason; per-file failures are recorded, never raised.

        Raises:
            DirectoryUnreadable: If the directory cannot be listed
        """
        async with self._pickup_lock:
            return await self._pickup(directory)

    def _set_aside(self, path: Path, reason: str, detail: str) -> None:
        try:
            self.quarantined.append(quarantine(path, reason, detail))
        except OSError as e:
            # stays pending; the next pickup tries again
            logger.error(
                "Cannot quarantine deposit",
                extra={"file": path.name, "reason": reason, "error": str(e)},
            )

    async def _pickup(self, directory: Path) -> list[StoredCredential]:
        stored: list[StoredCredential] = []
        for path in pending_deposits(directory):
            try:
                raw = path.read_bytes()
            except OSError as e:
                self._set_aside(path, "DepositUnreadable", str(e))
                continue

            try:
                entry = DepositFile.model_validate_json(raw)
                provider = self._provider(entry.provider)
                if provider.mode is not ProviderMode.OAUTH:
                    raise ConfigError(f"provider {entry.provider!r} does not take codes")
                if entry.client_id != provider.client_id:
                    raise ConfigError(f"deposit names client {entry.client_id!r}")

                assert provider.client_secret is not None
                self.server_calls += 1
                response = await self._issuer(entry.provider).exchange_code(
                    entry.code, entry.client_id, provider.client_secret
                )
                if response.refresh_token is None:
                    raise CaptokenError("code exchange returned no refresh token")

                scopes = parse_scopes(response.scope or "")
                credential = await self.store_refresh(entry.key(), response.refresh_token, scopes)
            except CaptokenError as e:
                self._set_aside(path, e.reason, str(e))
                continue
            except ValueError as e:
                self._set_aside(path, "MalformedDeposit", str(e))
                continue

            stored.append(credential)
            try:
                path.unlink()
            except OSError as e:
                # a second exchange of the same code is refused and quarantined
                logger.warning(
                    "Cannot remove consumed deposit",
                    extra={"file": path.name, "error": str(e)},
                )

        if stored:
            logger.info("Rendezvous pickup", extra={"stored": len(stored)})
        return stored

    # store

    async def store_refresh(
        self, key: CredentialKey, refresh_handle: str, scopes: list[Scope]
    ) -> StoredCredential:
        """
        Upsert a refresh handle; a replaced handle is revoked at its issuer.

        Raises:
            StoreWriteFailed: If the journal write fails
        """
        register_secret(refresh_handle)
        credential = StoredCredential(
            key=key,
            refresh_handle=SecretStr(refresh_handle),
            granted_scopes=dedupe(scopes),
            obtained_at=self.clock.now(),
        )
        previous = self.store.put(credential)
        self._invalidate(key)
        self.degraded.pop(key, None)
        logger.info("Credential stored", extra={"credential": str(key)})

        if previous is not None and previous.refresh_handle is not None:
            old_handle = previous.refresh_handle.get_secret_value()
            if old_handle != refresh_handle:
                await self._revoke_quietly(key.provider, old_handle)
        return credential

    def store_local(self, key: CredentialKey, project: str) -> StoredCredential:
        """Register a Local Mode credential: a project name, no refresh handle."""
        issuer = self.local_issuers.get(key.provider)
        if issuer is None:
            raise ConfigError(f"provider {key.provider!r} is not a local provider")
        scopes = dedupe(
            scope
            for rule in self._provider(key.provider).policy
            if rule.attribute_key == "project" and rule.attribute_value == project
            for scope in rule.grantable_scopes
        )
        if not scopes:
            raise NoMatchingPolicy(f"no policy for project {project!r}")
        credential = StoredCredential(
            key=key,
            refresh_handle=None,
            granted_scopes=scopes,
            obtained_at=self.clock.now(),
            project=project,
        )
        self.store.put(credential)
        self._invalidate(key)
        return credential

    async def _revoke_quietly(self, provider_name: str, handle: str) -> None:
        provider = self.providers.get(provider_name)
        if provider is None or provider.mode is not ProviderMode.OAUTH:
            return
        try:
            assert provider.client_id and provider.client_secret
            await self._issuer(provider_name).revoke(
                handle, provider.client_id, provider.client_secret
            )
        except CaptokenError as e:
            logger.warning(
                "Best-effort revocation failed",
                extra={"provider": provider_name, "error": e.reason},
            )

    async def delete(self, key: CredentialKey) -> bool:
        removed = self.store.delete(key)
        self._invalidate(key)
        if removed is not None and removed.refresh_handle is not None:
            await self._revoke_quietly(key.provider, removed.refresh_handle.get_secret_value())
        return removed is not None

    def list_credentials(self) -> list[StoredCredential]:
        return self.store.all()

    def refresh_handles(self) -> list[str]:
        """Plaintext handles, for containment checks inside the submit domain."""
        return [
            credential.refresh_handle.get_secret_value()
            for credential in self.store.all()
            if credential.refresh_handle is not None
        ]

    # access tokens

    def _invalidate(self, key: CredentialKey) -> None:
        for cache_key in [k for k in self._cache if k[0] == key]:
            self._evict(cache_key)

    def _evict(self, cache_key: CacheKey) -> None:
        self._cache.pop(cache_key, None)
        self._last_used.pop(cache_key, None)

    async def _mint(
        self,
        credential: StoredCredential,
        scopes: list[Scope],
        audience: str,
        origin: str | None,
    ) -> CachedAccessToken:
        key = credential.key
        self.server_calls += 1
        if credential.refresh_handle is None:
            assert credential.project is not None
            token = self.local_issuers[key.provider].local_issue(
                key.user,
                credential.project,
                self._provider(key.provider).policy,
                audience,
                origin,
                scopes,
            )
        else:
            token = await self._issuer(key.provider).refresh_access(
                credential.refresh_handle.get_secret_value(), scopes, audience, origin
            )

        _, payload = decode_unverified(token)
        return CachedAccessToken(
            key=key,
            scopes=scopes,
            audience=audience,
            origin=origin,
            token=token,
            issued_at=int(payload["iat"]),
            expires_at=int(payload["exp"]),
        )

    def _start_mint(
        self,
        cache_key: CacheKey,
        credential: StoredCredential,
        scopes: list[Scope],
        audience: str,
        origin: str | None,
    ) -> asyncio.Task[CachedAccessToken]:
        inflight = self._inflight.get(cache_key)
        if inflight is not None and inflight[0] is credential:
            return inflight[1]

        task = asyncio.create_task(self._mint(credential, scopes, audience, origin))
        self._inflight[cache_key] = (credential, task)

        def _done(_: asyncio.Task) -> None:
            current = self._inflight.get(cache_key)
            if current is not None and current[1] is task:
                del self._inflight[cache_key]

        task.add_done_callback(_done)
        return task

    async def get_access(
        self,
        key: CredentialKey,
        scopes: list[Scope],
        audience: str,
        origin: str | None = None,
        min_remaining: int = 0,
    ) -> str:
        """
        Return an access token for the credential, from cache when possible.

        A cached token is reused only for the same scope set, audience and
        origin, and only while at least `min_remaining` seconds of lifetime
        remain. Concurrent callers with the same arguments share one mint.

        Raises:
            UnknownCredential: If the key is not stored
            Revoked, RefreshExpired, ScopeEscalation: Propagated from the issuer
        """
        credential = self.store.get(key)
        if credential is None:
            raise UnknownCredential(f"no credential {key}")

        scopes = dedupe(scopes)
        cache_key: CacheKey = (key, frozenset(scopes), audience, origin)
        cached = self._cache.get(cache_key)
        if cached is not None and cached.remaining(self.clock.now()) >= min_remaining:
            self._last_used[cache_key] = self.clock.now()
            return cached.token

        task = self._start_mint(cache_key, credential, scopes, audience, origin)
        try:
            minted = await asyncio.shield(task)
        except CaptokenError as e:
            current = self.store.get(key)
            if current is not None and current is not credential:
                # the handle was replaced while the mint was in flight
                return await self.get_access(key, scopes, audience, origin, min_remaining)
            self.degraded[key] = e.reason
            raise

        self.degraded.pop(key, None)
        if minted.remaining(self.clock.now()) < min_remaining:
            logger.warning(
                "Fresh token shorter than requested remaining lifetime",
                extra={"credential": str(key), "min_remaining": min_remaining},
            )
        if self.store.get(key) is credential:
            self._cache[cache_key] = minted
            self._last_used[cache_key] = self.clock.now()
        return minted.token

    async def refresh_tick(self, now: int | None = None) -> list[CredentialKey]:
        """
        Proactively re-mint cached tokens that are close to expiry.

        A token is refreshed when its remaining lifetime falls below
        `refresh_margin` of its total lifetime. Entries nobody asked for within
        one token lifetime are evicted instead. Failures mark the credential
        degraded; no credential is removed.

        Returns:
            list[CredentialKey]: Keys that were refreshed, in cache order
        """
        now = self.clock.now() if now is None else now
        self.last_tick = []
        refreshed: list[CredentialKey] = []

        for cache_key, cached in list(self._cache.items()):
            if cached.remaining(now) >= self.refresh_margin * cached.lifetime:
                continue

            key = cached.key
            credential = self.store.get(key)
            idle = now - self._last_used.get(cache_key, cached.issued_at)
            if credential is None or idle > cached.lifetime:
                self._evict(cache_key)
                logger.debug("Evicted cached token", extra={"credential": str(key), "idle": idle})
                continue

            try:
                minted = await self._mint(credential, cached.scopes, cached.audience, cached.origin)
            except CaptokenError as e:
                self.degraded[key] = e.reason
                self.last_tick.append(TickOutcome(key=key, refreshed=False, reason=e.reason))
                logger.warning(
                    "Proactive refresh failed",
                    extra={"credential": str(key), "error": e.reason},
                )
                continue

            self._cache[cache_key] = minted
            self.degraded.pop(key, None)
            self.last_tick.append(TickOutcome(key=key, refreshed=True))
            if key not in refreshed:
                refreshed.append(key)

        return refreshed
