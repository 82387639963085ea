# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Authorization decisions over already-verified claims.
"""

from enum import Enum

from pydantic import BaseModel

from captoken.core.claims import TokenClaims
from captoken.core.scopes import Operation, Scope, covered, normalize_path
from captoken.errors import BadPath


class DenyReason(str, Enum):
    NO_MATCHING_SCOPE = "NoMatchingScope"
    ORIGIN_MISMATCH = "OriginMismatch"
    BAD_PATH = "BadPath"


class Decision(BaseModel):
    allowed: bool
    reason: DenyReason | None = None

    @classmethod
    def allow(cls) -> "Decision":
        return cls(allowed=True)

    @classmethod
    def deny(cls, reason: DenyReason) -> "Decision":
        return cls(allowed=False, reason=reason)


def enforce(
    claims: TokenClaims,
    operation: Operation | str,
    path: str,
    local_origin: str | None = None,
) -> Decision:
    """
    Decide one request against verified claims.

    Checks run path, then origin, then scope: a token bound to another
    execution node is refused whatever path it asks for.

    Args:
        claims: Claims of a verified token
        operation: Requested operation
        path: Requested absolute path, normalized here
        local_origin: Execution node the request comes from, if known

    Returns:
        Decision: allow, or deny with its reason
    """
    try:
        requested = Scope(operation=Operation(operation), path=normalize_path(path))
    except BadPath:
        return Decision.deny(DenyReason.BAD_PATH)

    if claims.origin is not None and claims.origin != local_origin:
        return Decision.deny(DenyReason.ORIGIN_MISMATCH)

    if not covered(requested, claims.scopes):
        return Decision.deny(DenyReason.NO_MATCHING_SCOPE)
    return Decision.allow()
