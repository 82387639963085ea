# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from enum import Enum
from pathlib import Path

from pydantic import BaseModel, Field, model_validator

from captoken.server.models import PolicyRule

DEFAULT_REFRESH_MARGIN = 0.2
QUARANTINE_DIR = "quarantine"
CREDS_JOURNAL = "creds.journal"


class ProviderMode(str, Enum):
    OAUTH = "oauth"
    LOCAL = "local"


class ProviderSettings(BaseModel):
    """
    One token provider known to the daemon.

    OAuth providers need the daemon's client credentials at the issuer. Local
    providers mint on the submit node from project policy with their own key.
    """

    issuer: str
    mode: ProviderMode = ProviderMode.OAUTH
    client_id: str | None = None
    client_secret: str | None = None
    signing_key: Path | None = None
    policy: list[PolicyRule] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_mode(self) -> "ProviderSettings":
        if self.mode is ProviderMode.OAUTH and not (self.client_id and self.client_secret):
            raise ValueError("oauth providers need client_id and client_secret")
        return self


class CreddSettings(BaseModel):
    """`[credd]` table of a service config file."""

    state_dir: Path
    rendezvous_dir: Path
    control_socket: Path
    providers: dict[str, ProviderSettings] = Field(default_factory=dict)
    refresh_margin: float = Field(default=DEFAULT_REFRESH_MARGIN, gt=0, lt=1)
    tick_interval: int = Field(default=30, gt=0)
