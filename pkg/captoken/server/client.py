# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
HTTP client for the token server.

Failures come back as the same exception classes the server raised, looked up
by the `error` field of the response body.
"""

import logging
from typing import Any

import httpx

from captoken.core.claims import DISCOVERY_PATH, IssuerMetadata
from captoken.core.scopes import Scope, format_scopes
from captoken.errors import CaptokenError, IssuerUnavailable, raise_for_reason
from captoken.server.issuer import ClientRegistration, IssuedGrant, TokenResponse

logger = logging.getLogger(__name__)


class IssuerClient:
    """
    Talks to one token server.

    Args:
        issuer: Issuer URL, used as the base URL for every endpoint
        http: Optional preconfigured client (e.g. bound to an ASGI transport)
        timeout: Request timeout in seconds when the client is created here

    Example:
        ```python
        async with IssuerClient("https://issuer.example") as client:
            metadata = await client.fetch_metadata()
        ```
    """

    def __init__(
        self,
        issuer: str,
        http: httpx.AsyncClient | None = None,
        timeout: float = 15.0,
    ):
        self.issuer = issuer.rstrip("/")
        self._owns_http = http is None
        self._http = http or httpx.AsyncClient(base_url=self.issuer, timeout=timeout)

    async def __aenter__(self) -> "IssuerClient":
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.aclose()

    async def aclose(self) -> None:
        if self._owns_http:
            await self._http.aclose()

    async def _request(self, method: str, path: str, **kwargs: Any) -> httpx.Response:
        try:
            response = await self._http.request(method, f"{self.issuer}{path}", **kwargs)
        except httpx.TransportError as e:
            raise IssuerUnavailable(f"{self.issuer} unreachable: {e}") from e

        if response.is_error:
            try:
                body = response.json()
            except ValueError:
                raise CaptokenError(f"{self.issuer}{path} returned {response.status_code}")
            raise_for_reason(body.get("error", "CaptokenError"), body.get("detail", ""))
        return response

    async def fetch_metadata(self) -> IssuerMetadata:
        response = await self._request("GET", DISCOVERY_PATH)
        return IssuerMetadata.model_validate(response.json())

    async def register_client(
        self, display_name: str, scopes: list[Scope]
    ) -> ClientRegistration:
        response = await self._request(
            "POST",
            "/register",
            json={"display_name": display_name, "scopes": [str(s) for s in scopes]},
        )
        return ClientRegistration.model_validate(response.json())

    async def authorize(
        self,
        user: str,
        attributes: dict[str, str],
        client_id: str,
        scopes: list[Scope],
    ) -> IssuedGrant:
        response = await self._request(
            "POST",
            "/authorize",
            json={
                "user": user,
                "attributes": attributes,
                "client_id": client_id,
                "scopes": [str(s) for s in scopes],
            },
        )
        return IssuedGrant.model_validate(response.json())

    async def exchange_code(
        self, code: str, client_id: str, client_secret: str
    ) -> TokenResponse:
        response = await self._request(
            "POST",
            "/token",
            data={
                "grant_type": "authorization_code",
                "code": code,
                "client_id": client_id,
                "client_secret": client_secret,
            },
        )
        return TokenResponse.model_validate(response.json())

    async def refresh_access(
        self,
        refresh_handle: str,
        scopes: list[Scope] | None,
        audience: str,
        origin: str | None = None,
    ) -> str:
        form = {
            "grant_type": "refresh_token",
            "refresh_token": refresh_handle,
            "audience": audience,
        }
        if scopes:
            form["scope"] = format_scopes(scopes)
        if origin:
            form["origin"] = origin
        response = await self._request("POST", "/token", data=form)
        return TokenResponse.model_validate(response.json()).access_token

    async def revoke(self, token: str, client_id: str, client_secret: str) -> None:
        await self._request(
            "POST",
            "/revoke",
            data={"token": token, "client_id": client_id, "client_secret": client_secret},
        )
