# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from pathlib import Path

from pydantic import BaseModel, Field

from captoken.core.claims import AUDIENCE_ANY
from captoken.core.scopes import Scope
from captoken.core.tokens import DEFAULT_SKEW
from captoken.server.models import PolicyRule

DEFAULT_ACCESS_LIFETIME = 600
DEFAULT_REFRESH_LIFETIME = 30 * 24 * 3600
DEFAULT_CODE_LIFETIME = 300


class IssuerSettings(BaseModel):
    """`[issuer]` table of a service config file."""

    issuer: str
    signing_key: Path | None = None
    listen: str = "127.0.0.1:8443"
    state_dir: Path | None = None
    access_lifetime: int = Field(default=DEFAULT_ACCESS_LIFETIME, gt=0)
    refresh_lifetime: int = Field(default=DEFAULT_REFRESH_LIFETIME, gt=0)
    code_lifetime: int = Field(default=DEFAULT_CODE_LIFETIME, gt=0, le=DEFAULT_CODE_LIFETIME)
    default_audience: str = AUDIENCE_ANY
    skew: int = Field(default=DEFAULT_SKEW, ge=0)
    scope_universe: list[Scope] = Field(default_factory=list)
    policy: list[PolicyRule] = Field(default_factory=list)
