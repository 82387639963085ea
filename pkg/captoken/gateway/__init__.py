# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from captoken.gateway.app import build_gateway, create_gateway_app, serve_gateway
from captoken.gateway.config import DEFAULT_ORIGIN_HEADER, REASON_HEADER, GatewayConfig
from captoken.gateway.service import Gateway, bearer_token
from captoken.gateway.trust import IssuerStatus, TrustStore

__all__ = [
    "build_gateway",
    "create_gateway_app",
    "serve_gateway",
    "DEFAULT_ORIGIN_HEADER",
    "REASON_HEADER",
    "GatewayConfig",
    "Gateway",
    "bearer_token",
    "IssuerStatus",
    "TrustStore",
]
