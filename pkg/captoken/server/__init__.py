# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from captoken.server.app import create_issuer_app
from captoken.server.config import IssuerSettings
from captoken.server.issuer import (
    ClientAction,
    ClientRegistration,
    IssuedGrant,
    TokenResponse,
    TokenServer,
)
from captoken.server.models import (
    AuditEntry,
    AuthorizationGrant,
    ClientRecord,
    PolicyRule,
    RefreshTokenRecord,
)
from captoken.server.store import ServerStore

__all__ = [
    "create_issuer_app",
    "IssuerSettings",
    "ClientAction",
    "ClientRegistration",
    "IssuedGrant",
    "TokenResponse",
    "TokenServer",
    "AuditEntry",
    "AuthorizationGrant",
    "ClientRecord",
    "PolicyRule",
    "RefreshTokenRecord",
    "ServerStore",
]
