# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
HTTP surface of the token server.

Endpoints:
    POST   /register                            dynamic client registration
    GET|PUT|DELETE /register/{client_id}        client management (registration token as Bearer)
    POST   /authorize                           programmatic consent
    POST   /token                               authorization_code | refresh_token grants
    POST   /revoke                              refresh-token revocation
    GET    /.well-known/captoken-configuration  discovery
"""

import logging
from typing import Any

from pydantic import BaseModel, Field, ValidationError
from starlette.applications import Starlette
from starlette.requests import Request
from starlette.responses import JSONResponse, Response
from starlette.routing import Route

from captoken.core.claims import DISCOVERY_PATH
from captoken.core.scopes import Scope, parse_scopes
from captoken.errors import BadRegistrationToken, CaptokenError
from captoken.server.issuer import ClientAction, TokenResponse, TokenServer

logger = logging.getLogger(__name__)


class RegistrationRequest(BaseModel):
    display_name: str
    scopes: list[Scope]


class ClientUpdate(BaseModel):
    display_name: str


class AuthorizeRequest(BaseModel):
    user: str
    attributes: dict[str, str] = Field(default_factory=dict)
    client_id: str
    scopes: list[Scope]


class RequestError(CaptokenError):
    """The request body or form did not parse."""


def error_response(error: CaptokenError) -> JSONResponse:
    return JSONResponse(
        {"error": error.reason, "detail": str(error)},
        status_code=error.status,
    )


async def _json_model(request: Request, model: type[BaseModel]) -> Any:
    try:
        return model.model_validate(await request.json())
    except (ValueError, ValidationError) as e:
        raise RequestError(f"invalid request body: {e}") from e


def _bearer(request: Request) -> str:
    header = request.headers.get("authorization", "")
    scheme, _, value = header.partition(" ")
    if scheme.lower() != "bearer" or not value:
        raise BadRegistrationToken("missing bearer registration token")
    return value.strip()


def _form_scopes(value: str | None) -> list[Scope] | None:
    if not value:
        return None
    return parse_scopes(value)


def create_issuer_app(server: TokenServer) -> Starlette:
    """
    Build the ASGI application for a token server.

    Args:
        server: The token server to expose

    Returns:
        Starlette: Application serving the token server endpoints
    """

    async def discovery(request: Request) -> Response:
        return JSONResponse(server.metadata().model_dump(mode="json", exclude_none=True))

    async def register(request: Request) -> Response:
        body = await _json_model(request, RegistrationRequest)
        registration = server.register_client(body.display_name, body.scopes)
        return JSONResponse(registration.model_dump(mode="json"), status_code=201)

    async def manage(request: Request) -> Response:
        client_id = request.path_params["client_id"]
        token = _bearer(request)

        match request.method:
            case "GET":
                record = server.manage_client(client_id, token, ClientAction.GET)
            case "PUT":
                update = await _json_model(request, ClientUpdate)
                record = server.manage_client(
                    client_id, token, ClientAction.UPDATE, display_name=update.display_name
                )
            case _:
                server.manage_client(client_id, token, ClientAction.DELETE)
                return Response(status_code=204)

        assert record is not None
        return JSONResponse(record.public_view())

    async def authorize(request: Request) -> Response:
        body = await _json_model(request, AuthorizeRequest)
        grant = server.authorize(body.user, body.attributes, body.client_id, body.scopes)
        return JSONResponse(grant.model_dump(mode="json"))

    async def token(request: Request) -> Response:
        form = await request.form()
        grant_type = form.get("grant_type")

        match grant_type:
            case "authorization_code":
                response = server.exchange_code(
                    str(form.get("code", "")),
                    str(form.get("client_id", "")),
                    str(form.get("client_secret", "")),
                )
            case "refresh_token":
                scopes = _form_scopes(form.get("scope"))  # type: ignore[arg-type]
                origin = form.get("origin") or None
                access_token = server.refresh_access(
                    str(form.get("refresh_token", "")),
                    scopes,
                    str(form.get("audience") or server.default_audience),
                    str(origin) if origin else None,
                )
                response = TokenResponse(
                    access_token=access_token, expires_in=server.access_lifetime
                )
            case _:
                raise RequestError(f"unsupported grant_type {grant_type!r}")

        return JSONResponse(
            response.model_dump(mode="json", exclude_none=True),
            headers={"Cache-Control": "no-store"},
        )

    async def revoke(request: Request) -> Response:
        form = await request.form()
        server.revoke(
            str(form.get("token", "")),
            str(form.get("client_id", "")),
            str(form.get("client_secret", "")),
        )
        return JSONResponse({})

    async def handle_error(request: Request, exc: Exception) -> Response:
        assert isinstance(exc, CaptokenError)
        logger.info(
            "Request failed",
            extra={"path": request.url.path, "error": exc.reason},
        )
        return error_response(exc)

    routes = [
        Route(DISCOVERY_PATH, discovery, methods=["GET"]),
        Route("/register", register, methods=["POST"]),
        Route("/register/{client_id}", manage, methods=["GET", "PUT", "DELETE"]),
        Route("/authorize", authorize, methods=["POST"]),
        Route("/token", token, methods=["POST"]),
        Route("/revoke", revoke, methods=["POST"]),
    ]
    return Starlette(routes=routes, exception_handlers={CaptokenError: handle_error})
