"""Authenticated encryption for datasets at rest.

Container byte layout (big-endian, no padding): 4-byte magic "GLDS", 1-byte
format version, 1-byte cipher id, 12-byte nonce, then ciphertext+tag. The only
cipher currently assigned is AES-256-GCM (id 0x01). Associated data binds a
ciphertext to its pipeline stage so a raw bundle cannot be renamed into an
anonymised one.

Every decryption failure — wrong key, wrong associated data, any flipped or
missing byte, bad magic or version — surfaces as the same AuthenticationFailure
with no partial plaintext.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthenticationFailure, ConfigError
from .model import SCHEMA_VERSION, STAGES

MAGIC = b"GLDS"
FORMAT_VERSION = 0x01
CIPHER_AES256_GCM = 0x01
NONCE_LEN = 12
_MIN_BODY = 16  # GCM tag length; ciphertext of empty plaintext
KEY_LEN = 32

CONTAINER_SUFFIX = ".glds.enc"
DEFAULT_KEY_ENV = "GLLA_KEY"


@dataclass(frozen=True)
class EncryptedContainer:
    cipher_id: int
    nonce: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return MAGIC + bytes((FORMAT_VERSION, self.cipher_id)) + self.nonce + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedContainer":
        if (
            len(data) < len(MAGIC) + 2 + NONCE_LEN + _MIN_BODY
            or data[: len(MAGIC)] != MAGIC
            or data[len(MAGIC)] != FORMAT_VERSION
        ):
            raise AuthenticationFailure("container failed authentication")
        cipher_id = data[len(MAGIC) + 1]
        nonce = data[len(MAGIC) + 2 : len(MAGIC) + 2 + NONCE_LEN]
        body = data[len(MAGIC) + 2 + NONCE_LEN :]
        return cls(cipher_id=cipher_id, nonce=nonce, body=body)


def _check_key(key: bytes):
    if not isinstance(key, (bytes, bytearray)) or len(key) != KEY_LEN:
        raise ConfigError(f"encryption key must be exactly {KEY_LEN} bytes")


def encrypt(plain: bytes, key: bytes, associated: bytes) -> EncryptedContainer:
    """Seal `plain` under `key`, binding `associated` into the authentication tag.
    A fresh random nonce is drawn per call."""
    _check_key(key)
    nonce = os.urandom(NONCE_LEN)
    body = AESGCM(bytes(key)).encrypt(nonce, plain, associated)
    return EncryptedContainer(cipher_id=CIPHER_AES256_GCM, nonce=nonce, body=body)


def decrypt(container: EncryptedContainer, key: bytes, associated: bytes) -> bytes:
    _check_key(key)
    if container.cipher_id != CIPHER_AES256_GCM or len(container.nonce) != NONCE_LEN:
        raise AuthenticationFailure("container failed authentication")
    try:
        return AESGCM(bytes(key)).decrypt(container.nonce, container.body, associated)
    except InvalidTag:
        raise AuthenticationFailure("container failed authentication") from None


def stage_ad(stage: str) -> bytes:
    """Associated data string for one pipeline stage."""
    return f"glds/{SCHEMA_VERSION}/{stage}".encode("ascii")


def open_any_stage(data: bytes, key: bytes) -> tuple[str, bytes]:
    """Decrypt container bytes trying each stage binding; returns (stage, plaintext).

    Lets callers distinguish "encrypted under the wrong stage" (a stage-order
    problem worth a precise message) from genuine tampering."""
    container = EncryptedContainer.from_bytes(data)
    for stage in STAGES:
        try:
            return stage, decrypt(container, key, stage_ad(stage))
        except AuthenticationFailure:
            continue
    raise AuthenticationFailure("container failed authentication")


def load_key_from_env(env_name: str = DEFAULT_KEY_ENV) -> bytes:
    """Read a 64-hex-char key from the named environment variable.

    Keys live in the environment, never in config files or on the command line."""
    raw = os.environ.get(env_name)
    if not raw:
        raise ConfigError(f"environment variable {env_name} is not set")
    raw = raw.strip()
    try:
        key = bytes.fromhex(raw)
    except ValueError:
        raise ConfigError(f"{env_name} must hold 64 hex characters") from None
    if len(key) != KEY_LEN:
        raise ConfigError(f"{env_name} must hold 64 hex characters (32 bytes)")
    return key
