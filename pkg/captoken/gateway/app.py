# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
HTTP surface of the data gateway: `GET /{path}` and `PUT /{path}`.
"""

import asyncio
import logging

import uvicorn
from starlette.applications import Starlette
from starlette.requests import Request
from starlette.responses import JSONResponse, Response
from starlette.routing import Route

from captoken.core.claims import IssuerMetadata
from captoken.errors import CaptokenError, Malformed, ObjectTooLarge, VerificationError
from captoken.gateway.config import REASON_HEADER, GatewayConfig
from captoken.gateway.service import Gateway, bearer_token
from captoken.gateway.trust import TrustStore

logger = logging.getLogger(__name__)


def request_path(request: Request) -> str:
    """The path exactly as sent, still percent-encoded."""
    raw = request.scope.get("raw_path")
    if raw:
        return raw.split(b"?", 1)[0].decode("latin-1")
    return request.url.path


def request_bearer(request: Request) -> str | None:
    """The bearer token, or None when there is no usable bearer credential."""
    try:
        return bearer_token(request.headers.get("authorization"))
    except Malformed:
        return None


async def read_capped(request: Request, limit: int) -> bytes:
    """
    Read the request body, stopping as soon as it exceeds `limit` bytes.

    Raises:
        ObjectTooLarge: If the declared or streamed size is over the limit
    """
    declared = request.headers.get("content-length", "")
    if declared.isdigit() and int(declared) > limit:
        raise ObjectTooLarge(f"declared {declared} bytes exceeds {limit}")

    body = bytearray()
    async for chunk in request.stream():
        body += chunk
        if len(body) > limit:
            raise ObjectTooLarge(f"body exceeds {limit} bytes")
    return bytes(body)


def error_response(error: CaptokenError) -> JSONResponse:
    headers = {REASON_HEADER: error.reason}
    if isinstance(error, VerificationError):
        headers["WWW-Authenticate"] = (
            f'Bearer error="invalid_token", error_description="{error.reason}"'
        )
    return JSONResponse(
        {"error": error.reason, "detail": str(error)},
        status_code=error.status,
        headers=headers,
    )


def create_gateway_app(gateway: Gateway) -> Starlette:
    """
    Build the ASGI application for a gateway.

    Args:
        gateway: The enforcement point to expose

    Returns:
        Starlette: Application serving GET and PUT on every path
    """
    origin_header = gateway.config.local_origin_header

    async def read(request: Request) -> Response:
        data = await gateway.handle_read(
            request_path(request),
            request_bearer(request),
            request.headers.get(origin_header),
        )
        return Response(data, media_type="application/octet-stream")

    async def write(request: Request) -> Response:
        path = await gateway.handle_write(
            request_path(request),
            lambda limit: read_capped(request, limit),
            request_bearer(request),
            request.headers.get(origin_header),
        )
        return JSONResponse({"path": path}, status_code=201)

    async def dispatch(request: Request) -> Response:
        if request.method == "PUT":
            return await write(request)
        return await read(request)

    async def handle_error(request: Request, exc: Exception) -> Response:
        assert isinstance(exc, CaptokenError)
        logger.info(
            "Request failed",
            extra={"method": request.method, "path": request.url.path, "error": exc.reason},
        )
        return error_response(exc)

    routes = [Route("/{path:path}", dispatch, methods=["GET", "PUT"])]
    return Starlette(routes=routes, exception_handlers={CaptokenError: handle_error})


def build_gateway(config: GatewayConfig) -> Gateway:
    """Create a gateway whose trust store is seeded from the configured discovery files."""
    trust = TrustStore(config.trusted_issuers)
    for path in config.discovery_files:
        trust.seed(IssuerMetadata.model_validate_json(path.read_bytes()))
    return Gateway(config, trust)


async def trust_refresher(gateway: Gateway) -> None:
    while True:
        await gateway.trust.refresh_trust()
        await gateway.clock.sleep(gateway.config.trust_refresh_interval)


async def serve_gateway(config: GatewayConfig) -> None:
    """Serve the gateway over HTTP and keep trust current until cancelled."""
    gateway = build_gateway(config)
    host, _, port = config.listen.rpartition(":")
    server = uvicorn.Server(
        uvicorn.Config(create_gateway_app(gateway), host=host, port=int(port), log_config=None)
    )

    async with asyncio.TaskGroup() as tg:
        tg.create_task(trust_refresher(gateway))
        tg.create_task(server.serve())
