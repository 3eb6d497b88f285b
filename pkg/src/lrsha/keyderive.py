"""Hash, PRF and hash-chain derivations.

Everything is keyed/personalised BLAKE2b so each role lives in its own
domain: the nonce PRF, the message-mask PRF, the random-oracle hash, the
key-evolution chain and the seed-to-scalar reduction can never collide on
identical inputs.  Seeds are 32 bytes; anything reduced to a scalar is first
expanded to 512 bits.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import EpochOutOfRange, InvalidStride

SEED_BYTES = 32
WIDE_BYTES = 64

TAG_NONCE = b"lrsha:prf:nonce"
TAG_MASK = b"lrsha:prf:mask"
TAG_HASH = b"lrsha:H"
TAG_CHAIN = b"lrsha:chain"
TAG_SEED2S = b"lrsha:seed2s"


_templates: dict[tuple[bytes, int], "hashlib._Hash"] = {}


def _digest(data: bytes, tag: bytes, size: int) -> bytes:
    # copying a personalised state is about twice as fast as constructing one
    t = _templates.get((tag, size))
    if t is None:
        t = _templates[(tag, size)] = hashlib.blake2b(digest_size=size, person=tag)
    h = t.copy()
    h.update(data)
    return h.digest()


def _as_key(key: bytes | int) -> bytes:
    if isinstance(key, int):
        return key.to_bytes(SEED_BYTES, "little")
    return bytes(key)


class PrfKey:
    """Keyed BLAKE2b PRF over an 8-byte little-endian counter.

    The key schedule runs once; each evaluation copies the keyed state.
    """

    __slots__ = ("_state",)

    def __init__(self, key: bytes | int, tag: bytes = TAG_NONCE, size: int = WIDE_BYTES):
        self._state = hashlib.blake2b(digest_size=size, key=_as_key(key), person=tag)

    def digest(self, counter: int) -> bytes:
        if counter < 0:
            raise ValueError("counter must be non-negative")
        h = self._state.copy()
        h.update(counter.to_bytes(8, "little"))
        return h.digest()

    def wide(self, counter: int) -> int:
        """Unreduced output as an integer (for sum-then-reduce callers)."""
        return int.from_bytes(self.digest(counter), "little")

    def scalar(self, counter: int, q: int) -> int:
        return self.wide(counter) % q


def prf_bytes(key: bytes | int, counter: int, tag: bytes = TAG_NONCE, size: int = SEED_BYTES) -> bytes:
    return PrfKey(key, tag, size).digest(counter)


def prf(key: bytes | int, counter: int, q: int, tag: bytes = TAG_NONCE) -> int:
    """PRF output reduced to a scalar mod ``q``.

    Integer keys are taken to be scalars and keyed by their canonical
    32-byte little-endian encoding.
    """
    return PrfKey(key, tag).scalar(counter, q)


_HASH = hashlib.blake2b(digest_size=WIDE_BYTES, person=TAG_HASH)
_CHAIN = hashlib.blake2b(digest_size=SEED_BYTES, person=TAG_CHAIN)
_SEED2S = hashlib.blake2b(digest_size=WIDE_BYTES, person=TAG_SEED2S)


def hash_to_scalar(msg: bytes, q: int) -> int:
    h = _HASH.copy()
    h.update(msg)
    return int.from_bytes(h.digest(), "little") % q


def hash_step(seed: bytes) -> bytes:
    h = _CHAIN.copy()
    h.update(seed)
    return h.digest()


def hash_chain(seed: bytes, k: int) -> bytes:
    """Apply :func:`hash_step` ``k`` times; ``k == 0`` returns the seed."""
    if k < 0:
        raise ValueError("k must be >= 0")
    s = bytes(seed)
    for _ in range(k):
        s = hash_step(s)
    return s


def seed_wide(seed: bytes, tag: bytes = TAG_SEED2S) -> int:
    """512-bit expansion of a chain value, not yet reduced."""
    if tag == TAG_SEED2S:
        h = _SEED2S.copy()
        h.update(seed)
        return int.from_bytes(h.digest(), "little")
    return int.from_bytes(_digest(seed, tag, WIDE_BYTES), "little")


def seed_to_scalar(seed: bytes, q: int, tag: bytes = TAG_SEED2S) -> int:
    """Reduce a chain value to a scalar at its point of use."""
    return seed_wide(seed, tag) % q


@dataclass(frozen=True)
class ChainTable:
    """Anchors of one hash chain at epochs 1, 1+stride, 1+2*stride, ...

    ``anchors[k]`` is the chain value at epoch ``1 + k*stride``.  Looking up
    any epoch costs at most ``stride - 1`` hash calls.
    """

    J: int
    stride: int
    anchors: tuple[bytes, ...]

    def anchor_epochs(self) -> list[int]:
        return [1 + k * self.stride for k in range(len(self.anchors))]

    def lookup_cost(self, j: int) -> int:
        self._check(j)
        return (j - 1) % self.stride

    def _check(self, j: int) -> None:
        if not 1 <= j <= self.J:
            raise EpochOutOfRange(f"epoch {j} outside [1, {self.J}]")

    def nbytes(self) -> int:
        return len(self.anchors) * SEED_BYTES


def build_chain_table(seed: bytes, J: int, stride: int) -> ChainTable:
    if J < 1 or not 1 <= stride <= J:
        raise InvalidStride(f"stride must lie in [1, {J}], got {stride}")
    anchors = [bytes(seed)]
    s = bytes(seed)
    for epoch in range(2, J + 1):
        s = hash_step(s)
        if (epoch - 1) % stride == 0:
            anchors.append(s)
    return ChainTable(J=J, stride=stride, anchors=tuple(anchors))


def chain_lookup(table: ChainTable, j: int) -> bytes:
    """Chain value at epoch ``j``, equal to ``hash_chain(seed, j - 1)``."""
    table._check(j)
    k, rem = divmod(j - 1, table.stride)
    return hash_chain(table.anchors[k], rem)
