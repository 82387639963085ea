# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Capability-checked file access under a sandbox root.

Every request runs path resolution, token verification and enforcement, in
that order, before the filesystem is touched.
"""

import logging
import os
import uuid
from collections.abc import Awaitable, Callable
from pathlib import Path
from urllib.parse import unquote

import anyio

from captoken.clock import Clock, SystemClock
from captoken.core.claims import TokenClaims
from captoken.core.enforce import enforce
from captoken.core.scopes import Operation, path_segments
from captoken.core.tokens import verify_token
from captoken.errors import AccessDenied, BadPath, Malformed, ObjectNotFound, ObjectTooLarge
from captoken.gateway.config import GatewayConfig
from captoken.gateway.trust import TrustStore

logger = logging.getLogger(__name__)

# called with the size limit once the request is authorized
BodyReader = Callable[[int], Awaitable[bytes]]


def bearer_token(authorization: str | None) -> str:
    """
    Extract the token from an `Authorization: Bearer <token>` header value.

    Raises:
        Malformed: If the header is missing or not a bearer credential
    """
    if not authorization:
        raise Malformed("missing bearer token")
    scheme, _, token = authorization.strip().partition(" ")
    if scheme.lower() != "bearer" or not token.strip():
        raise Malformed("authorization is not a bearer token")
    return token.strip()


class Gateway:
    """
    The data-domain enforcement point.

    Args:
        config: Gateway settings
        trust: Trusted issuers and their keys
        clock: Time source used when a request does not pin `now`
    """

    def __init__(self, config: GatewayConfig, trust: TrustStore, clock: Clock | None = None):
        self.config = config
        self.trust = trust
        self.clock = clock if clock is not None else SystemClock()
        self.root = config.sandbox_root.resolve()

    def resolve(self, raw_path: str) -> tuple[str, Path]:
        """
        Map a request path to its logical path and its file under the sandbox.

        The path is percent-decoded exactly once, then split into segments,
        then checked to stay inside the sandbox root after symlinks resolve.

        Returns:
            tuple[str, Path]: Normalized logical path and filesystem path

        Raises:
            BadPath: On dot segments, NUL bytes, or an escape from the root
        """
        try:
            decoded = unquote(raw_path, errors="strict")
        except UnicodeDecodeError as e:
            raise BadPath("path is not valid UTF-8 after decoding") from e
        if not decoded.startswith("/"):
            decoded = "/" + decoded
        segments = path_segments(decoded)
        if not segments:
            raise BadPath("the sandbox root is not an object")

        target = self.root.joinpath(*segments).resolve()
        if not target.is_relative_to(self.root) or target == self.root:
            raise BadPath(f"{decoded!r} escapes the sandbox")
        return "/" + "/".join(segments), target

    def authorize(
        self,
        operation: Operation,
        logical_path: str,
        bearer: str | None,
        claimed_origin: str | None,
        now: int | None = None,
    ) -> TokenClaims:
        """
        Verify the token and enforce the request against it.

        Raises:
            VerificationError: 401, the failed verification check
            AccessDenied: 403, the enforce deny reason
        """
        now = self.clock.now() if now is None else now
        if not bearer:
            raise Malformed("missing bearer token")
        claims = verify_token(
            bearer,
            self.trust.trusted(),
            self.config.service_audience,
            now,
            self.config.skew,
        )
        decision = enforce(claims, operation, logical_path, claimed_origin)
        if not decision.allowed:
            assert decision.reason is not None
            logger.info(
                "Request denied",
                extra={
                    "op": operation.value,
                    "path": logical_path,
                    "jti": claims.token_id,
                    "reason": decision.reason.value,
                },
            )
            raise AccessDenied(decision.reason.value, f"{operation.value} {logical_path}")
        return claims

    async def handle_read(
        self,
        path: str,
        bearer: str | None,
        claimed_origin: str | None = None,
        now: int | None = None,
    ) -> bytes:
        """
        Return the bytes of an object the token may read.

        Raises:
            BadPath: 400
            VerificationError: 401
            AccessDenied: 403
            ObjectNotFound: 404
        """
        logical, target = self.resolve(path)
        claims = self.authorize(Operation.READ, logical, bearer, claimed_origin, now)

        if not await anyio.Path(target).is_file():
            raise ObjectNotFound(logical)
        data = await self._read_file(target)
        logger.info(
            "Read", extra={"path": logical, "jti": claims.token_id, "bytes": len(data)}
        )
        return data

    async def handle_write(
        self,
        path: str,
        body: bytes | BodyReader,
        bearer: str | None,
        claimed_origin: str | None = None,
        now: int | None = None,
    ) -> str:
        """
        Atomically store an object the token may write.

        `body` is either the object itself or a reader that is only awaited
        after the token is accepted, and may raise ObjectTooLarge early.

        Returns:
            str: The normalized logical path written

        Raises:
            BadPath: 400
            VerificationError: 401
            AccessDenied: 403
            ObjectTooLarge: 413
        """
        logical, target = self.resolve(path)
        claims = self.authorize(Operation.WRITE, logical, bearer, claimed_origin, now)
        limit = self.config.max_object_bytes
        if not isinstance(body, bytes):
            body = await body(limit)
        if len(body) > limit:
            raise ObjectTooLarge(f"{len(body)} bytes exceeds {limit}")

        await anyio.to_thread.run_sync(self._write_atomic, target, body)
        logger.info(
            "Write", extra={"path": logical, "jti": claims.token_id, "bytes": len(body)}
        )
        return logical

    async def _read_file(self, target: Path) -> bytes:
        return await anyio.Path(target).read_bytes()

    def _write_atomic(self, target: Path, body: bytes) -> None:
        target.parent.mkdir(parents=True, exist_ok=True)
        if not target.parent.resolve().is_relative_to(self.root):
            raise BadPath("parent directory escapes the sandbox")

        temp = target.with_name(f".{target.name}.{uuid.uuid4().hex}.part")
        try:
            with open(temp, "wb") as f:
                f.write(body)
                f.flush()
                os.fsync(f.fileno())
            self._publish(temp, target)
        finally:
            temp.unlink(missing_ok=True)

    def _publish(self, temp: Path, target: Path) -> None:
        os.replace(temp, target)
