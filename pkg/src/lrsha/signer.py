"""Signer-side persistence and the offline/online split.

Key file layout::

    magic "LRSK" | version(1) | scheme(1) | backend(1) | reserved(1) | L(2) | checksum(8) | payload

LRSHA payload is ``y(32) | r^1..r^L (32 each) | j(8) | J(8)``; FLRSHA payload
is the 2L chain values followed by ``j(8) | J(8)``.  All integers are
little-endian and the checksum is an 8-byte BLAKE2b of the payload.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from ._io import atomic_write
from .errors import CorruptKeyFile, CountExceedsRemaining, DecodeError, StateExhausted
from .flrsha import FlrshaSignerKey, flrsha_sign
from .flrsha import _advance as _flrsha_advance
from .flrsha import epoch_material as flrsha_material
from .flrsha import sign_with_material as flrsha_finish
from .group import FLRSHA, LRSHA, SCALAR_BYTES, SchemeParams, group_by_id, scheme_code, scheme_from_code
from .keyderive import SEED_BYTES
from .lrsha import LrshaSignerKey, Signature, lrsha_sign
from .lrsha import epoch_material as lrsha_material
from .lrsha import sign_with_material as lrsha_finish

SignerKey = Union[LrshaSignerKey, FlrshaSignerKey]

KEY_MAGIC = b"LRSK"
STORE_MAGIC = b"LRPS"
VERSION = 1
_KEY_HEAD = struct.Struct("<4sBBBBH8s")
_TAIL = struct.Struct("<QQ")
_STORE_HEAD = struct.Struct("<4sBBBHQQ")


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8, person=b"lrsha:keyfile").digest()


def scheme_of(key: SignerKey) -> str:
    return FLRSHA if isinstance(key, FlrshaSignerKey) else LRSHA


# -- key files ------------------------------------------------------------

def key_payload(key: SignerKey) -> bytes:
    p = key.params
    tail = _TAIL.pack(key.j, p.J)
    if isinstance(key, FlrshaSignerKey):
        return bytes(key.chains) + tail
    return p.group.encode_scalar(key.y) + b"".join(key.seeds) + tail


def encode_signer_key(key: SignerKey) -> bytes:
    p = key.params
    payload = key_payload(key)
    head = _KEY_HEAD.pack(KEY_MAGIC, VERSION, scheme_code(scheme_of(key)), p.group.backend_id, 0,
                          p.L, _checksum(payload))
    return head + payload


def decode_signer_key(data: bytes) -> SignerKey:
    if len(data) < _KEY_HEAD.size:
        raise CorruptKeyFile("key file truncated")
    magic, version, code, backend, _, L, checksum = _KEY_HEAD.unpack_from(data, 0)
    if magic != KEY_MAGIC or version != VERSION:
        raise CorruptKeyFile("not a signer key file")
    payload = bytes(data[_KEY_HEAD.size:])
    if _checksum(payload) != checksum:
        raise CorruptKeyFile("key file checksum mismatch")
    try:
        scheme = scheme_from_code(code)
        group = group_by_id(backend)
        secret_len = 2 * L * SEED_BYTES if scheme == FLRSHA else SCALAR_BYTES + L * SEED_BYTES
        if len(payload) != secret_len + _TAIL.size:
            raise DecodeError("payload length mismatch")
        j, J = _TAIL.unpack_from(payload, secret_len)
        params = SchemeParams(group, J, L, scheme)
        if not 1 <= j <= J + 1:
            raise DecodeError("state out of range")
        if scheme == FLRSHA:
            return FlrshaSignerKey(params, payload[:secret_len], j)
        y = group.decode_scalar(payload[:SCALAR_BYTES])
        seeds = [payload[SCALAR_BYTES + i * SEED_BYTES: SCALAR_BYTES + (i + 1) * SEED_BYTES] for i in range(L)]
        return LrshaSignerKey(params, y, seeds, j)
    except (DecodeError, ValueError) as exc:
        raise CorruptKeyFile(str(exc)) from None


def load_signer_key(path: str | os.PathLike) -> SignerKey:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptKeyFile(f"cannot read key file: {exc}") from None
    return decode_signer_key(data)


def save_signer_key(path: str | os.PathLike, key: SignerKey) -> None:
    atomic_write(path, encode_signer_key(key))


# -- precomputation ---------------------------------------------------------

@dataclass
class PrecomputeStore:
    """Per-epoch signer material computed ahead of time.

    LRSHA entries are ``(r_sum, x)``, FLRSHA entries ``(y_sum, r_sum, x)``.
    """

    scheme: str
    backend_id: int
    L: int
    entries: dict[int, tuple] = field(default_factory=dict, repr=False)
    watermark: int = 0

    @property
    def entry_size(self) -> int:
        scalars = 2 if self.scheme == FLRSHA else 1
        return 8 + scalars * SCALAR_BYTES + SEED_BYTES

    @property
    def nbytes(self) -> int:
        return _STORE_HEAD.size + len(self.entries) * self.entry_size

    def needs_replenish(self) -> bool:
        return len(self.entries) <= self.watermark

    def take(self, j: int) -> tuple | None:
        """Pop the entry for epoch ``j`` and drop anything older."""
        for old in [k for k in self.entries if k < j]:
            del self.entries[old]
        return self.entries.pop(j, None)

    def to_bytes(self) -> bytes:
        head = _STORE_HEAD.pack(STORE_MAGIC, VERSION, scheme_code(self.scheme), self.backend_id,
                                self.L, len(self.entries), self.watermark)
        parts = [head]
        for j in sorted(self.entries):
            *scalars, x = self.entries[j]
            parts.append(j.to_bytes(8, "little"))
            parts.extend(s.to_bytes(SCALAR_BYTES, "little") for s in scalars)
            parts.append(x)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrecomputeStore":
        if len(data) < _STORE_HEAD.size:
            raise CorruptKeyFile("precompute store truncated")
        magic, version, code, backend, L, count, watermark = _STORE_HEAD.unpack_from(data, 0)
        if magic != STORE_MAGIC or version != VERSION:
            raise CorruptKeyFile("not a precompute store")
        try:
            scheme = scheme_from_code(code)
        except DecodeError as exc:
            raise CorruptKeyFile(str(exc)) from None
        store = cls(scheme, backend, L, watermark=watermark)
        size = store.entry_size
        if len(data) != _STORE_HEAD.size + count * size:
            raise CorruptKeyFile("precompute store length mismatch")
        nscalars = 2 if scheme == FLRSHA else 1
        off = _STORE_HEAD.size
        for _ in range(count):
            j = int.from_bytes(data[off:off + 8], "little")
            pos = off + 8
            scalars = []
            for _ in range(nscalars):
                scalars.append(int.from_bytes(data[pos:pos + SCALAR_BYTES], "little"))
                pos += SCALAR_BYTES
            store.entries[j] = (*scalars, data[pos:pos + SEED_BYTES])
            off += size
        return store


def precompute(key: SignerKey, count: int, watermark: int = 0) -> PrecomputeStore:
    """Material for the next ``count`` epochs; the live key is left untouched."""
    if count < 0 or count > key.remaining:
        raise CountExceedsRemaining(f"{count} requested, {key.remaining} epochs remain")
    p = key.params
    store = PrecomputeStore(scheme_of(key), p.group.backend_id, p.L, watermark=watermark)
    if isinstance(key, FlrshaSignerKey):
        snap = key.copy()
        for n in range(count):
            store.entries[snap.j] = flrsha_material(snap)
            if n + 1 < count:
                _flrsha_advance(snap)
        snap.wipe()
    else:
        for j in range(key.j, key.j + count):
            store.entries[j] = lrsha_material(key, j)
    return store


def sign(key: SignerKey, M: bytes, store: PrecomputeStore | None = None) -> Signature:
    """Sign with precomputed material when available, else derive online."""
    if key.j > key.params.J:
        raise StateExhausted(f"all {key.params.J} epochs used")
    entry = store.take(key.j) if store is not None else None
    if isinstance(key, FlrshaSignerKey):
        if entry is None:
            return flrsha_sign(key, M)
        return flrsha_finish(key, M, *entry)
    if entry is None:
        return lrsha_sign(key, M)
    sig = lrsha_finish(key, M, *entry)
    key.j += 1
    return sig
