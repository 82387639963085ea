# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from pathlib import Path

from pydantic import BaseModel, Field, field_validator

from captoken.core.tokens import DEFAULT_SKEW

DEFAULT_ORIGIN_HEADER = "X-Exec-Origin"
REASON_HEADER = "X-Authz-Reason"
DEFAULT_MAX_OBJECT_BYTES = 16 * 1024 * 1024


class GatewayConfig(BaseModel):
    """`[gateway]` table of a service config file."""

    sandbox_root: Path
    service_audience: str = Field(min_length=1)
    trusted_issuers: list[str] = Field(default_factory=list)
    local_origin_header: str = DEFAULT_ORIGIN_HEADER
    max_object_bytes: int = Field(default=DEFAULT_MAX_OBJECT_BYTES, gt=0)
    skew: int = Field(default=DEFAULT_SKEW, ge=0)
    listen: str = "127.0.0.1:8444"
    trust_refresh_interval: int = Field(default=300, gt=0)
    # discovery documents seeded at startup, for issuers not reachable over HTTP
    discovery_files: list[Path] = Field(default_factory=list)

    @field_validator("sandbox_root")
    @classmethod
    def _sandbox_exists(cls, path: Path) -> Path:
        if not path.is_dir():
            raise ValueError(f"sandbox_root {path} is not a directory")
        return path.resolve()
