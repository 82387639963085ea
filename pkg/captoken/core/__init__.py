# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

# Scopes
from captoken.core.scopes import (
    Operation,
    Scope,
    covered,
    normalize_path,
    parse_scope,
    parse_scopes,
    scope_permits,
)

# Claims, keys and discovery
from captoken.core.claims import (
    AUDIENCE_ANY,
    DISCOVERY_PATH,
    PROFILE_VERSION,
    IssuerMetadata,
    TokenClaims,
)
from captoken.core.keys import (
    ALGORITHM,
    JsonWebKey,
    KeyRecord,
    generate_key,
    key_from_seed,
    load_key,
    save_key,
)

# Tokens and decisions
from captoken.core.tokens import (
    DEFAULT_SKEW,
    decode_unverified,
    sign_token,
    verify_token,
)
from captoken.core.enforce import Decision, DenyReason, enforce

__all__ = [
    # Scopes
    "Operation",
    "Scope",
    "covered",
    "normalize_path",
    "parse_scope",
    "parse_scopes",
    "scope_permits",
    # Claims, keys and discovery
    "AUDIENCE_ANY",
    "DISCOVERY_PATH",
    "PROFILE_VERSION",
    "IssuerMetadata",
    "TokenClaims",
    "ALGORITHM",
    "JsonWebKey",
    "KeyRecord",
    "generate_key",
    "key_from_seed",
    "load_key",
    "save_key",
    # Tokens and decisions
    "DEFAULT_SKEW",
    "decode_unverified",
    "sign_token",
    "verify_token",
    "Decision",
    "DenyReason",
    "enforce",
]
