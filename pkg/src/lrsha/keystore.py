"""Sealed keystores: the stand-in for a server's secure enclave.

A keystore holds exactly one provisioned secret blob, encrypted with
ChaCha20-Poly1305 under a sealing key that never leaves the keystore
object (or its key file).  Nothing here ever logs, prints or reprs the
plaintext.  A real enclave backend would implement the same four methods.
"""

from __future__ import annotations

import os
import struct
import threading
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from ._io import atomic_write
from .errors import AlreadyProvisioned, CorruptKeyFile, NotProvisioned

_MAGIC = b"LRKS"
_VERSION = 1
_AAD = b"lrsha-keystore-v1"
_HEAD = struct.Struct("<4sB12s")
SEAL_KEY_ENV = "LRSHA_SEAL_KEY"


class SealedKeystore:
    """Interface shared by all backends."""

    backend = "abstract"

    def provision(self, blob: bytes) -> None:
        raise NotImplementedError

    def unseal(self) -> bytes:
        raise NotImplementedError

    def reseal(self, blob: bytes) -> None:
        """Replace the sealed blob with its evolved successor."""
        raise NotImplementedError

    @property
    def provisioned(self) -> bool:
        raise NotImplementedError

    def reset(self) -> None:
        raise NotImplementedError

    def status(self) -> dict:
        return {"backend": self.backend, "provisioned": self.provisioned}

    def __repr__(self) -> str:
        return f"<{type(self).__name__} provisioned={self.provisioned}>"


def _seal(key: bytes, blob: bytes) -> bytes:
    nonce = os.urandom(12)
    return _HEAD.pack(_MAGIC, _VERSION, nonce) + ChaCha20Poly1305(key).encrypt(nonce, blob, _AAD)


def _unseal(key: bytes, sealed: bytes) -> bytes:
    if len(sealed) < _HEAD.size:
        raise CorruptKeyFile("sealed blob truncated")
    magic, version, nonce = _HEAD.unpack_from(sealed, 0)
    if magic != _MAGIC or version != _VERSION:
        raise CorruptKeyFile("not a sealed keystore blob")
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, sealed[_HEAD.size:], _AAD)
    except InvalidTag:
        raise CorruptKeyFile("keystore authentication failed") from None


class InMemoryKeystore(SealedKeystore):
    backend = "in-memory-sealed"

    def __init__(self) -> None:
        self._key = ChaCha20Poly1305.generate_key()
        self._sealed: bytes | None = None
        self._lock = threading.Lock()

    @property
    def provisioned(self) -> bool:
        return self._sealed is not None

    def provision(self, blob: bytes) -> None:
        with self._lock:
            if self._sealed is not None:
                raise AlreadyProvisioned("keystore already holds a secret")
            self._sealed = _seal(self._key, bytes(blob))

    def unseal(self) -> bytes:
        sealed = self._sealed
        if sealed is None:
            raise NotProvisioned("keystore is empty")
        return _unseal(self._key, sealed)

    def reseal(self, blob: bytes) -> None:
        with self._lock:
            if self._sealed is None:
                raise NotProvisioned("keystore is empty")
            self._sealed = _seal(self._key, bytes(blob))

    def reset(self) -> None:
        with self._lock:
            self._sealed = None


class FileKeystore(SealedKeystore):
    """Sealed blob on disk; the sealing key comes from the environment or a
    sibling ``.key`` file created with mode 0600 on first use."""

    backend = "file-encrypted"

    def __init__(self, path: str | os.PathLike, seal_key: bytes | None = None):
        self.path = Path(path)
        self._lock = threading.Lock()
        if seal_key is None:
            env = os.environ.get(SEAL_KEY_ENV)
            seal_key = bytes.fromhex(env) if env else self._key_from_file()
        if len(seal_key) != 32:
            raise ValueError("sealing key must be 32 bytes")
        self._key = seal_key

    @property
    def key_path(self) -> Path:
        return self.path.with_name(self.path.name + ".key")

    def _key_from_file(self) -> bytes:
        kp = self.key_path
        if kp.exists():
            return kp.read_bytes()
        key = ChaCha20Poly1305.generate_key()
        fd = os.open(kp, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(key)
        return key

    @property
    def provisioned(self) -> bool:
        return self.path.exists()

    def _write(self, blob: bytes) -> None:
        atomic_write(self.path, _seal(self._key, bytes(blob)))

    def provision(self, blob: bytes) -> None:
        with self._lock:
            if self.path.exists():
                raise AlreadyProvisioned(f"{self.path} already holds a secret")
            self._write(blob)

    def unseal(self) -> bytes:
        try:
            sealed = self.path.read_bytes()
        except FileNotFoundError:
            raise NotProvisioned(f"{self.path} is empty") from None
        return _unseal(self._key, sealed)

    def reseal(self, blob: bytes) -> None:
        with self._lock:
            if not self.path.exists():
                raise NotProvisioned(f"{self.path} is empty")
            self._write(blob)

    def reset(self) -> None:
        with self._lock:
            self.path.unlink(missing_ok=True)
