# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

from captoken.credd.config import CreddSettings, ProviderMode, ProviderSettings
from captoken.credd.control import ControlServer, control_request
from captoken.credd.daemon import build_manager, serve_credd
from captoken.credd.manager import CredentialManager
from captoken.credd.models import (
    CachedAccessToken,
    CredentialKey,
    DepositFile,
    StoredCredential,
    ensure_untainted,
)
from captoken.credd.rendezvous import deposit, prepare_directory
from captoken.credd.store import CredentialStore

__all__ = [
    "CreddSettings",
    "ProviderMode",
    "ProviderSettings",
    "ControlServer",
    "control_request",
    "build_manager",
    "serve_credd",
    "CredentialManager",
    "CachedAccessToken",
    "CredentialKey",
    "DepositFile",
    "StoredCredential",
    "ensure_untainted",
    "deposit",
    "prepare_directory",
    "CredentialStore",
]
