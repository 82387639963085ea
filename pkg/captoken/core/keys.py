# Copyright AGNTCY Contributors (https://github.com/agntcy)
# SPDX-License-Identifier: Apache-2.0

"""
Signing keys and their public discovery form.

One asymmetric algorithm per deployment: Ed25519 (`EdDSA`). Its signatures are
deterministic, which keeps conformance vectors byte-exact. Symmetric
algorithms are never accepted.
"""

import json
import logging
import os
import secrets
from dataclasses import dataclass, replace
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
from jwt.utils import base64url_decode, base64url_encode
from pydantic import BaseModel

from captoken.errors import ConfigError, MissingPrivateKey, UnknownKey

logger = logging.getLogger(__name__)

ALGORITHM = "EdDSA"
SUPPORTED_ALGORITHMS = frozenset({ALGORITHM})


@dataclass(frozen=True)
class KeyRecord:
    key_id: str
    algorithm: str
    public_part: bytes
    private_part: bytes | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in SUPPORTED_ALGORITHMS:
            raise ConfigError(f"unsupported signing algorithm {self.algorithm!r}")

    def __repr__(self) -> str:
        private = "present" if self.private_part else "absent"
        return f"KeyRecord(key_id={self.key_id!r}, algorithm={self.algorithm!r}, private={private})"

    def public(self) -> "KeyRecord":
        """Copy without the private part."""
        return replace(self, private_part=None)

    def signing_key(self) -> Ed25519PrivateKey:
        if self.private_part is None:
            raise MissingPrivateKey(f"key {self.key_id} has no private part")
        return Ed25519PrivateKey.from_private_bytes(self.private_part)

    def verifying_key(self) -> Ed25519PublicKey:
        return Ed25519PublicKey.from_public_bytes(self.public_part)

    def to_jwk(self) -> "JsonWebKey":
        return JsonWebKey(
            kid=self.key_id,
            alg=self.algorithm,
            x=base64url_encode(self.public_part).decode("ascii"),
        )


class JsonWebKey(BaseModel):
    """Public key entry of a discovery document."""

    kty: str = "OKP"
    crv: str = "Ed25519"
    use: str = "sig"
    kid: str
    alg: str
    x: str

    def to_record(self) -> KeyRecord:
        return KeyRecord(
            key_id=self.kid,
            algorithm=self.alg,
            public_part=base64url_decode(self.x.encode("ascii")),
        )


def key_from_seed(seed: bytes, key_id: str | None = None) -> KeyRecord:
    """
    Build a signing key from a 32-byte Ed25519 seed.

    Args:
        seed: Raw private key bytes
        key_id: Key identifier, random when omitted

    Returns:
        KeyRecord: Key with both parts
    """
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyRecord(
        key_id=key_id or f"key-{secrets.token_hex(4)}",
        algorithm=ALGORITHM,
        public_part=public,
        private_part=seed,
    )


def generate_key(key_id: str | None = None) -> KeyRecord:
    return key_from_seed(secrets.token_bytes(32), key_id)


def save_key(key: KeyRecord, path: Path) -> None:
    """
    Write a key file readable only by its owner.

    The file holds the private part; it is never printed or logged.
    """
    document = {
        "kid": key.key_id,
        "alg": key.algorithm,
        "x": base64url_encode(key.public_part).decode("ascii"),
    }
    if key.private_part is not None:
        document["d"] = base64url_encode(key.private_part).decode("ascii")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_CREAT | os.O_WRONLY | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as fp:
        json.dump(document, fp, indent=2)
    os.chmod(path, 0o600)
    logger.info("Key written", extra={"kid": key.key_id, "path": str(path)})


def load_key(path: Path) -> KeyRecord:
    """
    Read a key file written by `save_key`.

    Raises:
        ConfigError: If the file is missing or not a key document
    """
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
        private = document.get("d")
        return KeyRecord(
            key_id=document["kid"],
            algorithm=document["alg"],
            public_part=base64url_decode(document["x"].encode("ascii")),
            private_part=base64url_decode(private.encode("ascii")) if private else None,
        )
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"cannot load key file {path}: {e}") from e


def find_key(keys: list[KeyRecord], key_id: str) -> KeyRecord:
    for key in keys:
        if key.key_id == key_id:
            return key
    raise UnknownKey(f"no key with id {key_id!r}")
