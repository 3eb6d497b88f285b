"""Prime-order group backends.

Group elements travel as their canonical 32-byte encodings in both backends,
so equality, hashing and wire formats never depend on the backend.  Scalars
are plain ints reduced modulo ``q``.

* :class:`Ristretto255` -- the production group (libsodium via pysodium).
* :class:`ToyGroup` -- the order-11 subgroup of Z_23^*, small enough that
  every equation can be checked by hand or by brute force.
* :class:`CountingGroup` -- wraps either backend and counts operations.
"""

from __future__ import annotations

import collections
import hmac
from dataclasses import dataclass
from typing import Iterable, Sequence

import pysodium

from .errors import DecodeError, EmptyList

SCALAR_BYTES = 32
ELEMENT_BYTES = 32

LRSHA = "lrsha"
FLRSHA = "flrsha"
SCHEMES = (LRSHA, FLRSHA)


class Group:
    """Common interface; subclasses provide the element primitives."""

    name: str = ""
    backend_id: int = 0
    q: int
    generator: bytes
    identity: bytes

    # -- scalars -------------------------------------------------------
    def scalar_add(self, a: int, b: int) -> int:
        return (a + b) % self.q

    def scalar_sum(self, xs: Iterable[int]) -> int:
        return sum(xs) % self.q

    def scalar_mulsub(self, r: int, e: int, y: int) -> int:
        """Return ``r - e*y mod q``."""
        return (r - e * y) % self.q

    def encode_scalar(self, x: int) -> bytes:
        return (x % self.q).to_bytes(SCALAR_BYTES, "little")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != SCALAR_BYTES:
            raise DecodeError(f"scalar must be {SCALAR_BYTES} bytes, got {len(data)}")
        x = int.from_bytes(data, "little")
        if x >= self.q:
            raise DecodeError("non-canonical scalar")
        return x

    # -- elements ------------------------------------------------------
    def decode_element(self, data: bytes) -> bytes:
        """Validate an encoded element and return it unchanged."""
        raise NotImplementedError

    def is_element(self, data: bytes) -> bool:
        try:
            self.decode_element(data)
        except DecodeError:
            return False
        return True

    def exp(self, base: bytes, x: int) -> bytes:
        raise NotImplementedError

    def mul(self, a: bytes, b: bytes) -> bytes:
        raise NotImplementedError

    def elem_product(self, xs: Sequence[bytes]) -> bytes:
        if not xs:
            raise EmptyList("product of an empty list")
        acc = xs[0]
        for x in xs[1:]:
            acc = self.mul(acc, x)
        return acc

    def verify_eq(self, R: bytes, s: int, Y: bytes, e: int) -> bool:
        """True iff ``R == generator^s * Y^e``."""
        rhs = self.mul(self.exp(self.generator, s), self.exp(Y, e))
        return hmac.compare_digest(rhs, R)

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class Ristretto255(Group):
    name = "ristretto255"
    backend_id = 1
    q = 2**252 + 27742317777372353535851937790883648493
    identity = bytes(ELEMENT_BYTES)
    generator = bytes.fromhex(
        "e2f2ae0a6abc4e71a884a961c500515f58e30b6aa582dd8db6a65945e08d2d76"
    )

    def decode_element(self, data: bytes) -> bytes:
        if len(data) != ELEMENT_BYTES:
            raise DecodeError(f"element must be {ELEMENT_BYTES} bytes, got {len(data)}")
        data = bytes(data)
        if data != self.identity and not pysodium.crypto_core_ristretto255_is_valid_point(data):
            raise DecodeError("not a canonical ristretto255 encoding")
        return data

    def exp(self, base: bytes, x: int) -> bytes:
        x %= self.q
        # libsodium refuses to return the identity, so handle it here
        if x == 0 or base == self.identity:
            return self.identity
        k = x.to_bytes(SCALAR_BYTES, "little")
        if base == self.generator:
            return pysodium.crypto_scalarmult_ristretto255_base(k)
        return pysodium.crypto_scalarmult_ristretto255(k, base)

    def mul(self, a: bytes, b: bytes) -> bytes:
        return pysodium.crypto_core_ristretto255_add(a, b)


class ToyGroup(Group):
    """Subgroup of order ``q`` in Z_p^*; the defaults give p=23, q=11, alpha=2."""

    backend_id = 2

    def __init__(self, p: int = 23, q: int = 11, g: int = 2):
        if (p - 1) % q or pow(g, q, p) != 1 or g % p == 1:
            raise ValueError("generator must have order q in Z_p^*")
        self.p = p
        self.q = q
        self.g = g
        self.name = f"toy{p}"
        self.generator = self.encode_int(g)
        self.identity = self.encode_int(1)

    @staticmethod
    def encode_int(v: int) -> bytes:
        return v.to_bytes(ELEMENT_BYTES, "little")

    def to_int(self, data: bytes) -> int:
        return int.from_bytes(self.decode_element(data), "little")

    def decode_element(self, data: bytes) -> bytes:
        if len(data) != ELEMENT_BYTES:
            raise DecodeError(f"element must be {ELEMENT_BYTES} bytes, got {len(data)}")
        v = int.from_bytes(data, "little")
        if not 0 < v < self.p or pow(v, self.q, self.p) != 1:
            raise DecodeError("not in the order-q subgroup")
        return bytes(data)

    def exp(self, base: bytes, x: int) -> bytes:
        v = int.from_bytes(base, "little")
        return self.encode_int(pow(v, x % self.q, self.p))

    def mul(self, a: bytes, b: bytes) -> bytes:
        va = int.from_bytes(a, "little")
        vb = int.from_bytes(b, "little")
        return self.encode_int(va * vb % self.p)


class CountingGroup(Group):
    """Delegating wrapper that tallies every group and scalar operation."""

    def __init__(self, inner: Group):
        self.inner = inner
        self.name = inner.name
        self.backend_id = inner.backend_id
        self.q = inner.q
        self.generator = inner.generator
        self.identity = inner.identity
        self.counts: collections.Counter[str] = collections.Counter()

    def reset(self) -> None:
        self.counts.clear()

    def exp(self, base: bytes, x: int) -> bytes:
        self.counts["exp"] += 1
        return self.inner.exp(base, x)

    def mul(self, a: bytes, b: bytes) -> bytes:
        self.counts["mul"] += 1
        return self.inner.mul(a, b)

    def decode_element(self, data: bytes) -> bytes:
        self.counts["decode_element"] += 1
        return self.inner.decode_element(data)

    def scalar_add(self, a: int, b: int) -> int:
        self.counts["scalar_add"] += 1
        return self.inner.scalar_add(a, b)

    def scalar_sum(self, xs: Iterable[int]) -> int:
        self.counts["scalar_sum"] += 1
        return self.inner.scalar_sum(xs)

    def scalar_mulsub(self, r: int, e: int, y: int) -> int:
        self.counts["scalar_mulsub"] += 1
        return self.inner.scalar_mulsub(r, e, y)


RISTRETTO255 = Ristretto255()
TOY = ToyGroup()

_BACKENDS: dict[str, Group] = {RISTRETTO255.name: RISTRETTO255, TOY.name: TOY}
_BY_ID: dict[int, Group] = {g.backend_id: g for g in _BACKENDS.values()}


def get_group(name: str) -> Group:
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown group backend {name!r}") from None


def group_by_id(backend_id: int) -> Group:
    try:
        return _BY_ID[backend_id]
    except KeyError:
        raise DecodeError(f"unknown group backend id {backend_id}") from None


def scheme_code(scheme: str) -> int:
    return SCHEMES.index(scheme) + 1


def scheme_from_code(code: int) -> str:
    if not 1 <= code <= len(SCHEMES):
        raise DecodeError(f"unknown scheme code {code}")
    return SCHEMES[code - 1]


@dataclass(frozen=True)
class SchemeParams:
    """Public parameters shared by signer, servers and verifiers."""

    group: Group
    J: int
    L: int
    scheme: str = LRSHA

    def __post_init__(self) -> None:
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def q(self) -> int:
        return self.group.q

    def with_group(self, group: Group) -> "SchemeParams":
        return SchemeParams(group, self.J, self.L, self.scheme)
