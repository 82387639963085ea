# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Token server core: client registration, consent, code exchange, refresh,
revocation and Local Mode issuance.

HTTP framing lives in `captoken.server.app`; everything here is plain method
calls so the simulator and tests can drive the server directly.
"""

import logging
import secrets
from collections.abc import Callable, Iterable
from enum import Enum

from jwt.utils import base64url_encode
from pydantic import BaseModel

from captoken.clock import Clock, SystemClock
from captoken.core.claims import AUDIENCE_ANY, IssuerMetadata, TokenClaims
from captoken.core.keys import KeyRecord, generate_key, load_key
from captoken.core.scopes import Scope, covered, dedupe
from captoken.core.tokens import DEFAULT_SKEW, sign_token
from captoken.errors import (
    BadClientCredentials,
    BadRegistrationToken,
    CodeConsumed,
    CodeExpired,
    EmptyScopes,
    NoMatchingPolicy,
    NoScopesApproved,
    RefreshExpired,
    Revoked,
    ScopeEscalation,
    ScopeUniverseEmpty,
    UnknownClient,
    UnknownCode,
    UnknownHandle,
)
from captoken.helpers import register_secret
from captoken.server.config import (
    DEFAULT_ACCESS_LIFETIME,
    DEFAULT_CODE_LIFETIME,
    DEFAULT_REFRESH_LIFETIME,
    IssuerSettings,
)
from captoken.server.models import (
    AuditEntry,
    AuthorizationGrant,
    ClientRecord,
    PolicyRule,
    RefreshTokenRecord,
    check_salted_hash,
    digest,
    salted_hash,
)
from captoken.server.store import ServerStore

logger = logging.getLogger(__name__)

PROJECT_ATTRIBUTE = "project"


class ClientAction(str, Enum):
    GET = "get"
    UPDATE = "update"
    DELETE = "delete"


class ClientRegistration(BaseModel):
    """Registration response; the secret and registration token are shown once."""

    client_id: str
    client_secret: str
    registration_token: str
    display_name: str
    allowed_scopes: list[Scope]
    created_at: int


class IssuedGrant(BaseModel):
    """An approved consent, carrying the plaintext single-use code."""

    code: str
    user: str
    client_id: str
    approved_scopes: list[Scope]
    expires_at: int


class TokenResponse(BaseModel):
    access_token: str
    token_type: str = "Bearer"
    expires_in: int
    refresh_token: str | None = None
    scope: str | None = None


class TokenServer:
    """
    Issues refresh and access tokens under per-client policy.

    Args:
        issuer: Issuer URL placed in every token and the discovery document
        signing_key: Active signing key (private part required)
        scope_universe: Scopes any client may ever be registered for
        policy: Attribute rules deciding what users may approve
        store: Persistent state
        clock: Time source
        access_lifetime: Access-token lifetime in seconds
        refresh_lifetime: Refresh-record lifetime in seconds
        code_lifetime: Authorization code lifetime in seconds
        default_audience: Audience of tokens minted by code exchange
        entropy: Source of random bytes for codes, handles, secrets and token ids
    """

    def __init__(
        self,
        issuer: str,
        signing_key: KeyRecord,
        scope_universe: Iterable[Scope],
        policy: Iterable[PolicyRule] = (),
        store: ServerStore | None = None,
        clock: Clock | None = None,
        access_lifetime: int = DEFAULT_ACCESS_LIFETIME,
        refresh_lifetime: int = DEFAULT_REFRESH_LIFETIME,
        code_lifetime: int = DEFAULT_CODE_LIFETIME,
        default_audience: str = AUDIENCE_ANY,
        skew: int = DEFAULT_SKEW,
        entropy: Callable[[int], bytes] = secrets.token_bytes,
    ):
        signing_key.signing_key()

        self.issuer = issuer
        self.scope_universe = dedupe(scope_universe)
        self.policy = list(policy)
        self.store = store if store is not None else ServerStore()
        self.clock = clock if clock is not None else SystemClock()
        self.access_lifetime = access_lifetime
        self.refresh_lifetime = refresh_lifetime
        self.code_lifetime = min(code_lifetime, DEFAULT_CODE_LIFETIME)
        self.default_audience = default_audience
        self.skew = skew
        self._entropy = entropy

        self.active_key = signing_key
        # retired public keys stay published until their expiry time
        self._retired: list[tuple[KeyRecord, int]] = []

    @classmethod
    def from_settings(
        cls, settings: IssuerSettings, clock: Clock | None = None
    ) -> "TokenServer":
        if settings.signing_key is not None:
            key = load_key(settings.signing_key)
        else:
            logger.warning("No signing key configured, generating an ephemeral one")
            key = generate_key()
        return cls(
            issuer=settings.issuer,
            signing_key=key,
            scope_universe=settings.scope_universe,
            policy=settings.policy,
            store=ServerStore(settings.state_dir),
            clock=clock,
            access_lifetime=settings.access_lifetime,
            refresh_lifetime=settings.refresh_lifetime,
            code_lifetime=settings.code_lifetime,
            default_audience=settings.default_audience,
            skew=settings.skew,
        )

    # helpers

    def _random(self, nbytes: int = 32) -> str:
        return base64url_encode(self._entropy(nbytes)).decode("ascii")

    def _secret(self) -> str:
        value = self._random(32)
        register_secret(value)
        return value

    def _authenticate_client(self, client_id: str, client_secret: str) -> ClientRecord:
        record = self.store.clients.get(client_id)
        if record is None or not check_salted_hash(client_secret, record.client_secret_hash):
            raise BadClientCredentials(f"client {client_id!r} failed authentication")
        return record

    def _mint(
        self,
        user: str,
        scopes: list[Scope],
        audience: str,
        origin: str | None,
        refresh_record: RefreshTokenRecord | None,
    ) -> str:
        now = self.clock.now()
        claims = TokenClaims(
            issuer=self.issuer,
            subject=user,
            audience=[audience],
            scopes=scopes,
            issued_at=now,
            not_before=now,
            expires_at=now + self.access_lifetime,
            token_id=self._random(16),
            origin=origin,
        )
        token = sign_token(claims, self.active_key, max_lifetime=self.access_lifetime)
        self.store.add_audit(
            AuditEntry(
                token_id=claims.token_id,
                refresh_digest=refresh_record.handle_digest if refresh_record else None,
                granted_scopes=refresh_record.granted_scopes if refresh_record else scopes,
                minted_scopes=scopes,
                issued_at=now,
            )
        )
        logger.info(
            "Access token minted",
            extra={
                "jti": claims.token_id,
                "sub": user,
                "scope": " ".join(str(s) for s in scopes),
                "aud": audience,
                "origin": origin or "",
            },
        )
        return token

    # discovery and keys

    def published_keys(self) -> list[KeyRecord]:
        now = self.clock.now()
        self._retired = [(key, until) for key, until in self._retired if until > now]
        return [self.active_key.public()] + [key.public() for key, _ in self._retired]

    def metadata(self) -> IssuerMetadata:
        return IssuerMetadata.for_issuer(self.issuer, self.published_keys())

    def rotate_key(self, new_key: KeyRecord | None = None, keep_previous: bool = True) -> KeyRecord:
        """
        Switch to a new signing key.

        Args:
            new_key: Replacement key, generated when omitted
            keep_previous: Keep publishing the old public key until tokens it
                signed have expired

        Returns:
            KeyRecord: The new active key
        """
        new_key = new_key or generate_key()
        new_key.signing_key()
        if keep_previous:
            until = self.clock.now() + self.access_lifetime + self.skew
            self._retired.append((self.active_key, until))
        else:
            self._retired.clear()
        logger.info(
            "Signing key rotated",
            extra={"old_kid": self.active_key.key_id, "new_kid": new_key.key_id},
        )
        self.active_key = new_key
        return new_key

    # client registration

    def register_client(
        self, display_name: str, requested_scopes: list[Scope]
    ) -> ClientRegistration:
        """
        Register a client dynamically.

        Raises:
            EmptyScopes: If no scopes were requested
            ScopeUniverseEmpty: If none of them lies inside the server's universe
        """
        if not requested_scopes:
            raise EmptyScopes("a client must request at least one scope")

        allowed = [s for s in dedupe(requested_scopes) if covered(s, self.scope_universe)]
        if not allowed:
            raise ScopeUniverseEmpty("no requested scope is grantable by this server")

        client_id = f"client-{self._random(12)}"
        client_secret = self._secret()
        registration_token = self._secret()
        record = ClientRecord(
            client_id=client_id,
            client_secret_hash=salted_hash(client_secret),
            display_name=display_name,
            allowed_scopes=allowed,
            registration_token_hash=salted_hash(registration_token),
            created_at=self.clock.now(),
        )
        self.store.put_client(record)
        logger.info(
            "Client registered",
            extra={"client_id": client_id, "display_name": display_name},
        )
        return ClientRegistration(
            client_id=client_id,
            client_secret=client_secret,
            registration_token=registration_token,
            display_name=display_name,
            allowed_scopes=allowed,
            created_at=record.created_at,
        )

    def manage_client(
        self,
        client_id: str,
        registration_token: str,
        action: ClientAction,
        display_name: str | None = None,
    ) -> ClientRecord | None:
        """
        Read, rename or delete a client with its registration token.

        Returns:
            The (updated) record for get/update, None after delete

        Raises:
            UnknownClient: If the client does not exist (or was deleted)
            BadRegistrationToken: If the token does not match
        """
        with self.store.lock:
            record = self.store.clients.get(client_id)
            if record is None:
                raise UnknownClient(f"no client {client_id!r}")
            if not check_salted_hash(registration_token, record.registration_token_hash):
                raise BadRegistrationToken(f"bad registration token for {client_id!r}")

            match ClientAction(action):
                case ClientAction.GET:
                    return record
                case ClientAction.UPDATE:
                    updated = record.model_copy(
                        update={"display_name": display_name or record.display_name}
                    )
                    self.store.put_client(updated)
                    return updated
                case ClientAction.DELETE:
                    self.store.delete_client(client_id)
                    logger.info("Client deleted", extra={"client_id": client_id})
                    return None

    # consent and exchange

    def authorize(
        self,
        user: str,
        user_attributes: dict[str, str],
        client_id: str,
        requested_scopes: list[Scope],
    ) -> IssuedGrant:
        """
        Approve the subset of requested scopes that policy and client allow.

        A requested scope is approved when some matching policy rule and some
        scope of the client's registration both cover it; the narrower
        requested scope is what gets approved.

        Raises:
            UnknownClient: If the client does not exist
            NoScopesApproved: If nothing at all is approved
        """
        client = self.store.clients.get(client_id)
        if client is None:
            raise UnknownClient(f"no client {client_id!r}")

        grantable = [
            scope
            for rule in self.policy
            if rule.matches(client_id, user_attributes)
            for scope in rule.grantable_scopes
        ]
        approved = [
            scope
            for scope in dedupe(requested_scopes)
            if covered(scope, grantable) and covered(scope, client.allowed_scopes)
        ]
        if not approved:
            raise NoScopesApproved(f"nothing approvable for {user!r} via {client_id!r}")

        code = self._secret()
        grant = AuthorizationGrant(
            code_digest=digest(code),
            user=user,
            client_id=client_id,
            approved_scopes=approved,
            expires_at=self.clock.now() + self.code_lifetime,
        )
        self.store.put_grant(grant)
        logger.info(
            "Authorization granted",
            extra={"user": user, "client_id": client_id, "approved": len(approved)},
        )
        return IssuedGrant(
            code=code,
            user=user,
            client_id=client_id,
            approved_scopes=approved,
            expires_at=grant.expires_at,
        )

    def exchange_code(self, code: str, client_id: str, client_secret: str) -> TokenResponse:
        """
        Trade a single-use code for a refresh handle and a first access token.

        Raises:
            UnknownCode, BadClientCredentials, CodeConsumed, CodeExpired
        """
        with self.store.lock:
            grant = self.store.grants.get(digest(code))
            if grant is None:
                raise UnknownCode("code not recognised")
            self._authenticate_client(client_id, client_secret)
            if grant.client_id != client_id:
                raise BadClientCredentials("code was issued to another client")
            if grant.consumed:
                raise CodeConsumed("code already exchanged")
            now = self.clock.now()
            if now > grant.expires_at:
                raise CodeExpired("code expired")
            self.store.consume_grant(grant.code_digest)

            handle = self._secret()
            record = RefreshTokenRecord(
                handle_digest=digest(handle),
                user=grant.user,
                client_id=client_id,
                granted_scopes=grant.approved_scopes,
                issued_at=now,
                expires_at=now + self.refresh_lifetime,
            )
            self.store.put_refresh(record)

        access_token = self._mint(
            grant.user, grant.approved_scopes, self.default_audience, None, record
        )
        return TokenResponse(
            access_token=access_token,
            expires_in=self.access_lifetime,
            refresh_token=handle,
            scope=" ".join(str(s) for s in grant.approved_scopes),
        )

    # refresh and revocation

    def refresh_access(
        self,
        refresh_handle: str,
        requested_scopes: list[Scope] | None,
        audience: str,
        origin: str | None = None,
    ) -> str:
        """
        Mint an access token from a refresh record, optionally attenuated.

        Raises:
            UnknownHandle, Revoked, RefreshExpired, ScopeEscalation
        """
        record = self.store.refresh.get(digest(refresh_handle))
        if record is None:
            raise UnknownHandle("refresh handle not recognised")
        if record.revoked:
            raise Revoked("refresh token was revoked")
        if self.clock.now() >= record.expires_at:
            raise RefreshExpired("refresh token expired")

        if requested_scopes:
            scopes = dedupe(requested_scopes)
            escalated = [s for s in scopes if not covered(s, record.granted_scopes)]
            if escalated:
                raise ScopeEscalation(
                    f"not covered by the refresh grant: {' '.join(map(str, escalated))}"
                )
        else:
            scopes = list(record.granted_scopes)

        return self._mint(record.user, scopes, audience, origin, record)

    def revoke(self, token_or_handle: str, client_id: str, client_secret: str) -> None:
        """
        Revoke a refresh handle owned by the client; idempotent.

        Access tokens are stateless, so revoking one is accepted and ignored:
        it stays valid until it expires.

        Raises:
            BadClientCredentials: If the client fails authentication
        """
        self._authenticate_client(client_id, client_secret)
        with self.store.lock:
            record = self.store.refresh.get(digest(token_or_handle))
            if record is None or record.client_id != client_id:
                logger.info("Revocation of untracked token ignored", extra={"client_id": client_id})
                return
            self.store.revoke_refresh(record.handle_digest)
        logger.info("Refresh token revoked", extra={"client_id": client_id, "user": record.user})

    # Local Mode

    def local_issue(
        self,
        user: str,
        job_project: str,
        policy: Iterable[PolicyRule],
        audience: str,
        origin: str | None = None,
        requested_scopes: list[Scope] | None = None,
    ) -> str:
        """
        Issue an access token straight from administrator project policy.

        No consent, no grant and no refresh record are involved. Without
        `requested_scopes` the token carries everything the project is granted.

        Raises:
            NoMatchingPolicy: If no rule names the project
            ScopeEscalation: If a requested scope is outside the project's grant
        """
        matching = [
            rule
            for rule in policy
            if rule.attribute_key == PROJECT_ATTRIBUTE and rule.attribute_value == job_project
        ]
        if not matching:
            raise NoMatchingPolicy(f"no policy for project {job_project!r}")

        granted = dedupe(scope for rule in matching for scope in rule.grantable_scopes)
        if requested_scopes:
            scopes = dedupe(requested_scopes)
            escalated = [s for s in scopes if not covered(s, granted)]
            if escalated:
                raise ScopeEscalation(
                    f"not in project policy: {' '.join(map(str, escalated))}"
                )
        else:
            scopes = granted
        return self._mint(user, scopes, audience, origin, None)

    # audit

    def audit_attenuation(self) -> list[AuditEntry]:
        """
        Replay the audit log and return every entry that escalated.

        An empty list means each minted scope was covered by the refresh
        record it was minted from.
        """
        return [
            entry
            for entry in self.store.audit
            if not all(covered(s, entry.granted_scopes) for s in entry.minted_scopes)
        ]
