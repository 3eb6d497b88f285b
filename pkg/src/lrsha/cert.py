"""Commitment certification.

Two signature schemes with the same certificate container:

* ``sgn_*`` -- Schnorr in (challenge, response) form with deterministic
  nonces.  The challenge travels as the full 32-byte digest and is compared
  byte-for-byte, so the check stays sharp even over the toy group.
* ``fsgn_*`` -- forward-secure variant: one Schnorr key per epoch, secrets
  taken from a one-way hash chain, public keys committed in a Merkle tree so
  a verifier keeps a single 32-byte root.

Certificate layout (little-endian integers)::

    tag(1) | epoch(8) | e(32) | s(32) | [epoch_pk(32), FS only] | path_len(2) | path(32 each)
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
import struct
from dataclasses import dataclass, field
from typing import Callable

from . import keyderive as kd
from .errors import ACCEPT, DecodeError, EpochExpired, EpochOutOfRange, StateExhausted, Verdict, reject
from .group import ELEMENT_BYTES, SCALAR_BYTES, Group

TAG_PLAIN = 0x01
TAG_FS = 0x02

DIGEST_BYTES = 32
_HEAD = struct.Struct("<BQ")
_PATHLEN = struct.Struct("<H")

TAG_CHALLENGE = b"lrsha:cert:e"
TAG_CERT_NONCE = b"lrsha:cert:k"
TAG_FS_CHAIN = b"lrsha:fs:chain"
TAG_FS_KEY = b"lrsha:fs:key"
TAG_LEAF = b"lrsha:fs:leaf"
TAG_NODE = b"lrsha:fs:node"

RandBytes = Callable[[int], bytes]


def random_scalar(group: Group, rng: RandBytes | None = None) -> int:
    """Uniform non-zero scalar from 512 random bits."""
    rng = rng or secrets.token_bytes
    while True:
        x = int.from_bytes(rng(64), "little") % group.q
        if x:
            return x


@dataclass(frozen=True)
class Certificate:
    tag: int
    epoch: int
    e: bytes
    s: int
    epoch_pk: bytes | None = None
    path: tuple[bytes, ...] = ()

    def encode(self) -> bytes:
        parts = [_HEAD.pack(self.tag, self.epoch), self.e, self.s.to_bytes(SCALAR_BYTES, "little")]
        if self.tag == TAG_FS:
            parts.append(self.epoch_pk or b"")
        parts.append(_PATHLEN.pack(len(self.path)))
        parts.extend(self.path)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        data = bytes(data)
        if len(data) < _HEAD.size + DIGEST_BYTES + SCALAR_BYTES + _PATHLEN.size:
            raise DecodeError("certificate truncated")
        tag, epoch = _HEAD.unpack_from(data, 0)
        if tag not in (TAG_PLAIN, TAG_FS):
            raise DecodeError(f"unknown certificate tag {tag}")
        off = _HEAD.size
        e = data[off:off + DIGEST_BYTES]
        off += DIGEST_BYTES
        s = int.from_bytes(data[off:off + SCALAR_BYTES], "little")
        off += SCALAR_BYTES
        pk = None
        if tag == TAG_FS:
            pk = data[off:off + ELEMENT_BYTES]
            off += ELEMENT_BYTES
        if len(data) < off + _PATHLEN.size:
            raise DecodeError("certificate truncated")
        (n,) = _PATHLEN.unpack_from(data, off)
        off += _PATHLEN.size
        if len(data) != off + n * DIGEST_BYTES:
            raise DecodeError("certificate length does not match its path length")
        path = tuple(data[off + i * DIGEST_BYTES: off + (i + 1) * DIGEST_BYTES] for i in range(n))
        if tag == TAG_PLAIN and (epoch or n):
            raise DecodeError("plain certificates carry no epoch or path")
        return cls(tag, epoch, e, s, pk, path)


# -- Schnorr core -------------------------------------------------------

def _challenge(R: bytes, pk: bytes, msg: bytes) -> bytes:
    return hashlib.blake2b(R + pk + msg, digest_size=DIGEST_BYTES, person=TAG_CHALLENGE).digest()


def _schnorr_sign(group: Group, sk: int, pk: bytes, msg: bytes) -> tuple[bytes, int]:
    k = kd.seed_to_scalar(group.encode_scalar(sk) + msg, group.q, TAG_CERT_NONCE)
    R = group.exp(group.generator, k)
    e = _challenge(R, pk, msg)
    s = group.scalar_mulsub(k, int.from_bytes(e, "little"), sk)
    return e, s


def _schnorr_check(group: Group, pk: bytes, msg: bytes, e: bytes, s: int) -> Verdict:
    if len(e) != DIGEST_BYTES:
        return reject("DecodeError")
    if s >= group.q:
        return reject("NonCanonicalScalar")
    try:
        group.decode_element(pk)
    except DecodeError:
        return reject("DecodeError")
    e_int = int.from_bytes(e, "little") % group.q
    R = group.mul(group.exp(group.generator, s), group.exp(pk, e_int))
    if not hmac.compare_digest(_challenge(R, pk, msg), e):
        return reject("BadCertificate")
    return ACCEPT


# -- plain Schnorr (SGN) -----------------------------------------------

@dataclass(frozen=True)
class CertKeypair:
    secret: int = field(repr=False)
    public: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.public, bytes) or len(self.public) != ELEMENT_BYTES:
            raise ValueError("public key must be a 32-byte element encoding")


def sgn_keypair_from_secret(group: Group, secret: int) -> CertKeypair:
    return CertKeypair(secret % group.q, group.exp(group.generator, secret))


def sgn_keygen(group: Group, rng: RandBytes | None = None) -> CertKeypair:
    return sgn_keypair_from_secret(group, random_scalar(group, rng))


def sgn_sign(group: Group, kp: CertKeypair, msg: bytes) -> Certificate:
    e, s = _schnorr_sign(group, kp.secret, kp.public, msg)
    return Certificate(TAG_PLAIN, 0, e, s)


def sgn_verify(group: Group, pk: bytes, msg: bytes, cert: Certificate | bytes) -> Verdict:
    if not isinstance(cert, Certificate):
        try:
            cert = Certificate.decode(cert)
        except DecodeError:
            return reject("DecodeError")
    if cert.tag != TAG_PLAIN:
        return reject("WrongSchemeTag")
    return _schnorr_check(group, pk, msg, cert.e, cert.s)


# -- forward-secure Schnorr (FSGN) --------------------------------------

def merkle_depth(J: int) -> int:
    return (J - 1).bit_length()


def merkle_leaf(epoch: int, pk: bytes) -> bytes:
    return hashlib.blake2b(
        epoch.to_bytes(8, "little") + pk, digest_size=DIGEST_BYTES, person=TAG_LEAF
    ).digest()


def merkle_node(left: bytes, right: bytes) -> bytes:
    return hashlib.blake2b(left + right, digest_size=DIGEST_BYTES, person=TAG_NODE).digest()


def _build_levels(leaves: list[bytes], depth: int) -> list[list[bytes]]:
    level = list(leaves) + [bytes(DIGEST_BYTES)] * ((1 << depth) - len(leaves))
    levels = [level]
    while len(level) > 1:
        level = [merkle_node(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def _epoch_secret(group: Group, chain_value: bytes) -> int:
    return kd.seed_to_scalar(chain_value, group.q, TAG_FS_KEY)


def _fs_step(seed: bytes) -> bytes:
    return hashlib.blake2b(seed, digest_size=kd.SEED_BYTES, person=TAG_FS_CHAIN).digest()


class FsCertState:
    """Evolving signer state of the forward-secure certificate scheme.

    Holds only the chain value of the current epoch plus the public Merkle
    structure.  Advancing overwrites the chain buffer in place.  Single
    writer: callers serialise :func:`fsgn_sign`.
    """

    _MAGIC = b"LRFS"
    _VERSION = 1

    def __init__(self, group: Group, J: int, epoch: int, chain_value: bytes, leaves: list[bytes]):
        if J < 1:
            raise ValueError("J must be >= 1")
        if len(leaves) != J:
            raise ValueError("need exactly J leaves")
        self.group = group
        self.J = J
        self.epoch = epoch
        self._chain = bytearray(chain_value)
        self.leaves = leaves
        self.depth = merkle_depth(J)
        self._levels = _build_levels(leaves, self.depth)

    @property
    def root(self) -> bytes:
        return self._levels[-1][0]

    @property
    def exhausted(self) -> bool:
        return self.epoch > self.J

    def auth_path(self, epoch: int) -> tuple[bytes, ...]:
        idx = epoch - 1
        path = []
        for level in self._levels[:-1]:
            path.append(level[idx ^ 1])
            idx >>= 1
        return tuple(path)

    def advance_to(self, epoch: int) -> None:
        """Evolve the chain to ``epoch``, erasing every earlier value."""
        if epoch < self.epoch:
            raise EpochExpired(f"epoch {epoch} precedes current epoch {self.epoch}")
        if not 1 <= epoch <= self.J:
            raise EpochOutOfRange(f"epoch {epoch} outside [1, {self.J}]")
        while self.epoch < epoch:
            self._chain[:] = _fs_step(bytes(self._chain))
            self.epoch += 1

    def step(self) -> None:
        """Move past the current epoch; after the last one the chain is wiped."""
        if self.epoch < self.J:
            self.advance_to(self.epoch + 1)
        else:
            self._chain[:] = bytes(len(self._chain))
            self.epoch = self.J + 1

    def current_secret(self) -> int:
        return _epoch_secret(self.group, bytes(self._chain))

    def to_bytes(self) -> bytes:
        head = self._MAGIC + struct.pack("<BBQQ", self._VERSION, self.group.backend_id, self.J, self.epoch)
        return head + bytes(self._chain) + b"".join(self.leaves)

    @classmethod
    def from_bytes(cls, data: bytes, group: Group) -> "FsCertState":
        hsize = 4 + struct.calcsize("<BBQQ")
        if len(data) < hsize + kd.SEED_BYTES or data[:4] != cls._MAGIC:
            raise DecodeError("not a forward-secure certificate state")
        version, backend, J, epoch = struct.unpack_from("<BBQQ", data, 4)
        if version != cls._VERSION or backend != group.backend_id:
            raise DecodeError("forward-secure state version or backend mismatch")
        off = hsize
        chain = data[off:off + kd.SEED_BYTES]
        off += kd.SEED_BYTES
        if len(data) != off + J * DIGEST_BYTES:
            raise DecodeError("forward-secure state length mismatch")
        leaves = [data[off + i * DIGEST_BYTES: off + (i + 1) * DIGEST_BYTES] for i in range(J)]
        return cls(group, J, epoch, chain, leaves)

    def copy(self) -> "FsCertState":
        other = object.__new__(FsCertState)
        other.__dict__.update(self.__dict__)
        other._chain = bytearray(self._chain)
        return other

    def __repr__(self) -> str:
        return f"FsCertState(J={self.J}, epoch={self.epoch}, root={self.root.hex()[:16]}...)"


def fsgn_keygen(group: Group, J: int, rng: RandBytes | None = None) -> tuple[FsCertState, bytes]:
    """Fresh forward-secure key; returns the state and the Merkle root."""
    if J < 1:
        raise ValueError("J must be >= 1")
    rng = rng or secrets.token_bytes
    first = rng(kd.SEED_BYTES)
    leaves = []
    c = first
    for epoch in range(1, J + 1):
        pk = group.exp(group.generator, _epoch_secret(group, c))
        leaves.append(merkle_leaf(epoch, pk))
        if epoch < J:
            c = _fs_step(c)
    state = FsCertState(group, J, 1, first, leaves)
    return state, state.root


def fsgn_sign(state: FsCertState, epoch: int, msg: bytes) -> Certificate:
    """Certify ``msg`` under the epoch key, then erase that key.

    Each epoch key signs once: afterwards the state sits at ``epoch + 1``
    (or is wiped after the last epoch), so ``epoch`` itself is expired.
    """
    if state.exhausted:
        raise StateExhausted(f"all {state.J} certificate epochs used")
    state.advance_to(epoch)
    group = state.group
    sk = state.current_secret()
    pk = group.exp(group.generator, sk)
    e, s = _schnorr_sign(group, sk, pk, msg)
    cert = Certificate(TAG_FS, epoch, e, s, pk, state.auth_path(epoch))
    state.step()
    return cert


def fsgn_verify(group: Group, root: bytes, J: int, epoch: int, msg: bytes,
                cert: Certificate | bytes) -> Verdict:
    if not isinstance(cert, Certificate):
        try:
            cert = Certificate.decode(cert)
        except DecodeError:
            return reject("DecodeError")
    if cert.tag != TAG_FS:
        return reject("WrongSchemeTag")
    if not 1 <= epoch <= J:
        return reject("EpochOutOfRange")
    if cert.epoch != epoch:
        return reject("WrongEpoch")
    if len(cert.path) != merkle_depth(J) or cert.epoch_pk is None:
        return reject("BadPath")
    node = merkle_leaf(epoch, cert.epoch_pk)
    idx = epoch - 1
    for sibling in cert.path:
        node = merkle_node(sibling, node) if idx & 1 else merkle_node(node, sibling)
        idx >>= 1
    if not hmac.compare_digest(node, root):
        return reject("BadPath")
    return _schnorr_check(group, cert.epoch_pk, msg, cert.e, cert.s)
