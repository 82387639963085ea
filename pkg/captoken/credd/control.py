# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Local control socket of the credential daemon.

One JSON object per line in each direction. Requests carry an `op` of STORE,
GET_ACCESS, LIST, DELETE, PICKUP or TICK; responses are `{"ok": true, ...}` or
`{"ok": false, "error": <reason>, "detail": ...}`.
"""

import asyncio
import json
import logging
import os
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from captoken.core.scopes import Scope
from captoken.credd.manager import CredentialManager
from captoken.credd.models import CredentialKey
from captoken.errors import CaptokenError

logger = logging.getLogger(__name__)


class _KeyedRequest(BaseModel):
    user: str
    provider: str
    handle_name: str

    def key(self) -> CredentialKey:
        return CredentialKey(user=self.user, provider=self.provider, handle_name=self.handle_name)


class StoreRequest(_KeyedRequest):
    op: Literal["STORE"]
    refresh_token: str
    scopes: list[Scope]


class GetAccessRequest(_KeyedRequest):
    op: Literal["GET_ACCESS"]
    scopes: list[Scope]
    audience: str
    origin: str | None = None
    min_remaining: int = Field(default=0, ge=0)


class DeleteRequest(_KeyedRequest):
    op: Literal["DELETE"]


class ListRequest(BaseModel):
    op: Literal["LIST"]


class PickupRequest(BaseModel):
    op: Literal["PICKUP"]


class TickRequest(BaseModel):
    op: Literal["TICK"]


ControlRequest = Annotated[
    StoreRequest | GetAccessRequest | DeleteRequest | ListRequest | PickupRequest | TickRequest,
    Field(discriminator="op"),
]
_request_adapter: TypeAdapter[ControlRequest] = TypeAdapter(ControlRequest)


class ControlServer:
    """
    Serves the control protocol for one credential manager.

    Args:
        manager: The credential manager to drive
        rendezvous_dir: Directory PICKUP reads from
    """

    def __init__(self, manager: CredentialManager, rendezvous_dir: Path):
        self.manager = manager
        self.rendezvous_dir = rendezvous_dir

    async def dispatch(self, line: bytes) -> dict[str, Any]:
        """Handle one request line and build its response object."""
        try:
            request = _request_adapter.validate_json(line)
        except ValidationError as e:
            return {"ok": False, "error": "BadRequest", "detail": str(e)}
        except CaptokenError as e:
            return {"ok": False, "error": e.reason, "detail": str(e)}

        try:
            match request:
                case StoreRequest():
                    await self.manager.store_refresh(
                        request.key(), request.refresh_token, request.scopes
                    )
                    return {"ok": True}
                case GetAccessRequest():
                    token = await self.manager.get_access(
                        request.key(),
                        request.scopes,
                        request.audience,
                        request.origin,
                        request.min_remaining,
                    )
                    return {"ok": True, "access_token": token}
                case DeleteRequest():
                    return {"ok": True, "deleted": await self.manager.delete(request.key())}
                case ListRequest():
                    return {
                        "ok": True,
                        "credentials": [c.summary() for c in self.manager.list_credentials()],
                    }
                case PickupRequest():
                    stored = await self.manager.rendezvous_pickup(self.rendezvous_dir)
                    return {"ok": True, "stored": [c.summary() for c in stored]}
                case TickRequest():
                    refreshed = await self.manager.refresh_tick()
                    return {"ok": True, "refreshed": [str(k) for k in refreshed]}
        except CaptokenError as e:
            return {"ok": False, "error": e.reason, "detail": str(e)}
        return {"ok": False, "error": "BadRequest", "detail": "unhandled op"}

    async def handle_connection(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            while line := await reader.readline():
                if not line.strip():
                    continue
                response = await self.dispatch(line)
                writer.write(json.dumps(response).encode() + b"\n")
                await writer.drain()
        except Exception:
            logger.error("Error serving control connection", exc_info=True)
        finally:
            writer.close()

    async def serve(self, socket_path: Path) -> asyncio.AbstractServer:
        """Start listening on a Unix socket only the daemon account can use."""
        socket_path = Path(socket_path)
        socket_path.parent.mkdir(parents=True, exist_ok=True)
        if socket_path.exists():
            socket_path.unlink()
        server = await asyncio.start_unix_server(self.handle_connection, path=str(socket_path))
        os.chmod(socket_path, 0o600)
        logger.info("Control socket listening", extra={"socket": str(socket_path)})
        return server


async def control_request(socket_path: Path, request: dict[str, Any]) -> dict[str, Any]:
    """Send one request over the control socket and return the response."""
    reader, writer = await asyncio.open_unix_connection(str(socket_path))
    try:
        writer.write(json.dumps(request).encode() + b"\n")
        await writer.drain()
        return json.loads(await reader.readline())
    finally:
        writer.close()
        await writer.wait_closed()
