# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

# Logging
from captoken.helpers import register_secret, setup_logging

# Time
from captoken.clock import Clock, SystemClock, VirtualClock

# Errors
from captoken.errors import CaptokenError, raise_for_reason

__all__ = [
    "register_secret",
    "setup_logging",
    "Clock",
    "SystemClock",
    "VirtualClock",
    "CaptokenError",
    "raise_for_reason",
]
