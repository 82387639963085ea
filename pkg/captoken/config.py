# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
TOML configuration loading.

Each service declares a pydantic settings model; `load_settings` parses the
file and validates it into that model.
"""

import logging
import tomllib
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, ValidationError

from captoken.errors import ConfigError, MalformedScope

logger = logging.getLogger(__name__)

SettingsT = TypeVar("SettingsT", bound=BaseModel)


def read_toml(path: Path) -> dict:
    """
    Parse a TOML file.

    Raises:
        ConfigError: If the file cannot be read or parsed
    """
    try:
        with open(path, "rb") as fp:
            return tomllib.load(fp)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path} is not valid TOML: {e}") from e


def load_settings(path: Path, model: type[SettingsT], section: str | None = None) -> SettingsT:
    """
    Load a TOML file (or one table of it) into a settings model.

    Args:
        path: TOML file
        model: Pydantic model to validate into
        section: Optional top-level table to read instead of the whole file

    Returns:
        The validated settings

    Raises:
        ConfigError: On read, parse or validation failure
    """
    data = read_toml(path)
    if section is not None:
        data = data.get(section, {})

    try:
        settings = model.model_validate(data)
    except (ValidationError, MalformedScope) as e:
        raise ConfigError(f"invalid configuration in {path}: {e}") from e

    logger.info("Configuration loaded", extra={"path": str(path), "model": model.__name__})
    return settings
