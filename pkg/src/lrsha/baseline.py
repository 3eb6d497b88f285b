"""Plain Schnorr signatures over the same group, used as the speed reference."""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass, field

from .cert import RandBytes, random_scalar
from .errors import DecodeError
from .group import Group

_TAG = b"lrsha:schnorr"


@dataclass(frozen=True)
class SchnorrKey:
    group: Group
    x: int = field(repr=False)
    X: bytes


def _challenge(group: Group, R: bytes, X: bytes, M: bytes) -> int:
    d = hashlib.blake2b(R + X + M, digest_size=64, person=_TAG).digest()
    return int.from_bytes(d, "little") % group.q


def schnorr_keygen(group: Group, rng: RandBytes | None = None) -> SchnorrKey:
    x = random_scalar(group, rng)
    return SchnorrKey(group, x, group.exp(group.generator, x))


def schnorr_sign(key: SchnorrKey, M: bytes, rng: RandBytes | None = None) -> bytes:
    """Return ``R || s``; one fixed-base exponentiation per signature."""
    group = key.group
    k = random_scalar(group, rng or secrets.token_bytes)
    R = group.exp(group.generator, k)
    e = _challenge(group, R, key.X, M)
    return R + group.encode_scalar((k + e * key.x) % group.q)


def schnorr_verify(group: Group, X: bytes, M: bytes, sig: bytes) -> bool:
    if len(sig) != 64:
        return False
    R = sig[:32]
    try:
        s = group.decode_scalar(sig[32:])
        group.decode_element(R)
    except DecodeError:
        return False
    e = _challenge(group, R, X, M)
    # g^s == R * X^e  <=>  R == g^s * X^(-e)
    return group.verify_eq(R, s, X, (-e) % group.q)
