# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Scopes: one (operation, path-prefix) capability each.

Textual form is `<operation>:<absolute-path>`, e.g. `read:/ligo/frames`.
Lists of scopes serialize as a single space-separated string inside tokens.
"""

from collections.abc import Iterable
from enum import Enum
from typing import Any

from pydantic import (
    BaseModel,
    ConfigDict,
    field_validator,
    model_serializer,
    model_validator,
)

from captoken.errors import BadPath, MalformedScope


class Operation(str, Enum):
    """Operations a scope can grant."""

    READ = "read"
    WRITE = "write"


def path_segments(path: str) -> list[str]:
    """
    Split an absolute path into its normalized segments.

    Args:
        path: Candidate absolute path

    Returns:
        list[str]: Non-empty segments, root path yields []

    Raises:
        BadPath: If the path is relative, contains `.`/`..` or a NUL byte
    """
    if not path.startswith("/"):
        raise BadPath(f"path must be absolute: {path!r}")
    if "\x00" in path:
        raise BadPath("path contains NUL")

    segments = [segment for segment in path.split("/") if segment]
    if any(segment in (".", "..") for segment in segments):
        raise BadPath(f"dot segments are not allowed: {path!r}")
    return segments


def normalize_path(path: str) -> str:
    """Collapse duplicate slashes and drop a trailing slash; `/` stays `/`."""
    return "/" + "/".join(path_segments(path))


class Scope(BaseModel):
    """A single capability. Serializes to and parses from its string form."""

    model_config = ConfigDict(frozen=True)

    operation: Operation
    path: str

    @model_validator(mode="before")
    @classmethod
    def _from_text(cls, data: Any) -> Any:
        if isinstance(data, str):
            operation, path = _split_scope(data)
            return {"operation": operation, "path": path}
        return data

    @field_validator("path")
    @classmethod
    def _normalize(cls, path: str) -> str:
        try:
            return normalize_path(path)
        except BadPath as e:
            raise ValueError(str(e)) from e

    @model_serializer
    def _to_text(self) -> str:
        return str(self)

    def __str__(self) -> str:
        return f"{self.operation.value}:{self.path}"

    def segments(self) -> list[str]:
        return path_segments(self.path)


def _split_scope(text: str) -> tuple[str, str]:
    operation, sep, path = text.partition(":")
    if not sep:
        raise MalformedScope(f"missing ':' in scope {text!r}")
    try:
        Operation(operation)
    except ValueError:
        raise MalformedScope(f"unknown operation {operation!r} in scope {text!r}")
    try:
        return operation, normalize_path(path)
    except BadPath as e:
        raise MalformedScope(f"bad path in scope {text!r}: {e}") from e


def parse_scope(text: str) -> Scope:
    """
    Parse and normalize one scope string.

    Args:
        text: Scope in the form `<operation>:<path>`

    Returns:
        Scope: The normalized scope

    Raises:
        MalformedScope: Missing colon, unknown operation, relative path or dot segments
    """
    operation, path = _split_scope(text.strip())
    return Scope(operation=Operation(operation), path=path)


def parse_scopes(text: str) -> list[Scope]:
    """Parse a space-separated scope list; empty text yields []."""
    return [parse_scope(item) for item in text.split()]


def format_scopes(scopes: Iterable[Scope]) -> str:
    return " ".join(str(scope) for scope in scopes)


def scope_permits(granted: Scope, requested: Scope) -> bool:
    """
    Decide whether one granted scope covers a requested one.

    True iff the operations match and the granted path is a segment-wise
    prefix of the requested path: `/a` covers `/a` and `/a/b`, never `/ab`.
    """
    if granted.operation != requested.operation:
        return False
    if granted.path == "/" or granted.path == requested.path:
        return True
    return requested.path.startswith(granted.path + "/")


def covered(requested: Scope, granted: Iterable[Scope]) -> bool:
    """True iff some granted scope permits the requested one."""
    return any(scope_permits(scope, requested) for scope in granted)


def dedupe(scopes: Iterable[Scope]) -> list[Scope]:
    """Drop repeated scopes, keeping first-seen order."""
    return list(dict.fromkeys(scopes))
