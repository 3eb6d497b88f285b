"""LRSHA: Schnorr-style signing with commitments outsourced to L servers.

The signer never computes a group exponentiation.  Its nonce for epoch j is
the sum of L PRF outputs whose group images R_j^l are produced, certified
and served by the L commitment servers; verifiers multiply those images
together and check the usual Schnorr equation against a hash of the
message and a secret one-time mask x_j.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from . import keyderive as kd
from .cert import (
    Certificate,
    CertKeypair,
    RandBytes,
    random_scalar,
    sgn_keygen,
    sgn_keypair_from_secret,
    sgn_sign,
    sgn_verify,
)
from .errors import (
    ACCEPT,
    CertFailure,
    DecodeError,
    EpochMismatch,
    EpochOutOfRange,
    MalformedSecret,
    MissingServer,
    StateExhausted,
    Verdict,
    reject,
)
from .group import ELEMENT_BYTES, LRSHA, SCALAR_BYTES, Group, SchemeParams, group_by_id

DEFAULT_J = 2**20
COMMIT_DOMAIN = b"lrsha/commit/v1"

SIGNATURE_BYTES = 72
_SIG = struct.Struct("<32s32sQ")
_BUNDLE_HEAD = struct.Struct("<HQ")


class Signature(NamedTuple):
    s: int
    x: bytes
    j: int

    def encode(self) -> bytes:
        return _SIG.pack(self.s.to_bytes(SCALAR_BYTES, "little"), self.x, self.j)

    @classmethod
    def decode(cls, data: bytes) -> "Signature":
        if len(data) != SIGNATURE_BYTES:
            raise DecodeError(f"signature must be {SIGNATURE_BYTES} bytes, got {len(data)}")
        s, x, j = _SIG.unpack(bytes(data))
        return cls(int.from_bytes(s, "little"), x, j)


@dataclass(frozen=True)
class CommitmentBundle:
    """One server's certified commitment for one epoch."""

    server: int
    epoch: int
    R: bytes
    cert: Certificate

    def encode(self) -> bytes:
        return _BUNDLE_HEAD.pack(self.server, self.epoch) + self.R + self.cert.encode()

    @classmethod
    def decode(cls, data: bytes) -> "CommitmentBundle":
        data = bytes(data)
        head = _BUNDLE_HEAD.size
        if len(data) < head + ELEMENT_BYTES:
            raise DecodeError("bundle truncated")
        server, epoch = _BUNDLE_HEAD.unpack_from(data, 0)
        R = data[head:head + ELEMENT_BYTES]
        return cls(server, epoch, R, Certificate.decode(data[head + ELEMENT_BYTES:]))


def commit_message(server: int, epoch: int, R: bytes) -> bytes:
    return COMMIT_DOMAIN + _BUNDLE_HEAD.pack(server, epoch) + R


# -- keys -----------------------------------------------------------------

@dataclass
class LrshaSignerKey:
    params: SchemeParams
    y: int = field(repr=False)
    seeds: list[bytes] = field(repr=False)
    j: int = 1

    def __post_init__(self) -> None:
        if len(self.seeds) != self.params.L:
            raise ValueError("need one seed per server")
        self._nonce_prfs = [kd.PrfKey(seed, kd.TAG_NONCE) for seed in self.seeds]
        self._mask_prf = kd.PrfKey(self.params.group.encode_scalar(self.y), kd.TAG_MASK, kd.SEED_BYTES)

    @property
    def remaining(self) -> int:
        return max(0, self.params.J - self.j + 1)


@dataclass(frozen=True)
class LrshaPublicKey:
    params: SchemeParams
    Y: bytes
    cert_keys: tuple[bytes, ...]

    def __post_init__(self) -> None:
        if len(self.cert_keys) != self.params.L:
            raise ValueError("need one certification key per server")


@dataclass(frozen=True)
class LrshaServerSecret:
    params: SchemeParams
    index: int
    cert: CertKeypair = field(repr=False)
    seed: bytes = field(repr=False)

    _MAGIC = b"LRSS"

    def __post_init__(self) -> None:
        if not 1 <= self.index <= self.params.L:
            raise ValueError(f"server index must lie in [1, {self.params.L}]")

    def to_bytes(self) -> bytes:
        p = self.params
        head = self._MAGIC + struct.pack("<BBBHQQ", 1, 1, p.group.backend_id, self.index, p.L, p.J)
        return head + p.group.encode_scalar(self.cert.secret) + self.seed

    @classmethod
    def from_bytes(cls, data: bytes) -> "LrshaServerSecret":
        hsize = 4 + struct.calcsize("<BBBHQQ")
        if len(data) != hsize + 2 * SCALAR_BYTES or data[:4] != cls._MAGIC:
            raise MalformedSecret("not an LRSHA server secret")
        version, code, backend, index, L, J = struct.unpack_from("<BBBHQQ", data, 4)
        if version != 1 or code != 1:
            raise MalformedSecret("not an LRSHA server secret")
        try:
            group = group_by_id(backend)
            sk = group.decode_scalar(data[hsize:hsize + SCALAR_BYTES])
            params = SchemeParams(group, J, L, LRSHA)
            return cls(params, index, sgn_keypair_from_secret(group, sk), data[hsize + SCALAR_BYTES:])
        except (DecodeError, ValueError) as exc:
            raise MalformedSecret(str(exc)) from None


def lrsha_keygen(params: SchemeParams, rng: RandBytes | None = None):
    """Return ``(signer_key, public_key, server_secrets)``."""
    rng = rng or secrets.token_bytes
    if params.scheme != LRSHA:
        params = SchemeParams(params.group, params.J, params.L, LRSHA)
    group = params.group
    y = random_scalar(group, rng)
    Y = group.exp(group.generator, y)
    servers = []
    for index in range(1, params.L + 1):
        kp = sgn_keygen(group, rng)
        servers.append(LrshaServerSecret(params, index, kp, rng(kd.SEED_BYTES)))
    sk = LrshaSignerKey(params, y, [s.seed for s in servers])
    pk = LrshaPublicKey(params, Y, tuple(s.cert.public for s in servers))
    return sk, pk, servers


# -- per-epoch derivations ------------------------------------------------

def nonce_share(seed: bytes, j: int, q: int) -> int:
    return kd.prf(seed, j, q, kd.TAG_NONCE)


def epoch_material(key: LrshaSignerKey, j: int) -> tuple[int, bytes]:
    """``(r_j^{1,L}, x_j)`` for epoch ``j``; the precompute store caches these."""
    # summing unreduced shares and reducing once gives the same scalar
    r_sum = key.params.group.scalar_sum([p.wide(j) for p in key._nonce_prfs])
    return r_sum, key._mask_prf.digest(j)


def sign_with_material(key: LrshaSignerKey, M: bytes, r_sum: int, x: bytes) -> Signature:
    group = key.params.group
    e = kd.hash_to_scalar(M + x, group.q)
    return Signature(group.scalar_mulsub(r_sum, e, key.y), x, key.j)


def lrsha_sign(key: LrshaSignerKey, M: bytes) -> Signature:
    if key.j > key.params.J:
        raise StateExhausted(f"all {key.params.J} epochs used")
    r_sum, x = epoch_material(key, key.j)
    sig = sign_with_material(key, M, r_sum, x)
    key.j += 1
    return sig


# -- server side ------------------------------------------------------------

def lrsha_server_commit(secret: LrshaServerSecret, j: int) -> CommitmentBundle:
    group = secret.params.group
    if not 1 <= j <= secret.params.J:
        raise EpochOutOfRange(f"epoch {j} outside [1, {secret.params.J}]")
    R = group.exp(group.generator, nonce_share(secret.seed, j, group.q))
    cert = sgn_sign(group, secret.cert, commit_message(secret.index, j, R))
    return CommitmentBundle(secret.index, j, R, cert)


# -- verifier side ----------------------------------------------------------

def check_bundle_frame(bundles: Sequence, L: int, epoch: int | None) -> int:
    """Shared positional checks; returns the epoch the bundles speak for.

    ``bundles[i]`` is what server ``i + 1`` answered.  When ``epoch`` is
    given it is what the caller asked for, so any disagreement is charged to
    the answering server.
    """
    if len(bundles) != L:
        raise MissingServer(len(bundles) + 1 if len(bundles) < L else L + 1,
                            f"expected {L} bundles, got {len(bundles)}")
    for pos, b in enumerate(bundles, start=1):
        if b is None:
            raise MissingServer(pos)
    if epoch is None:
        epochs = {b.epoch for b in bundles}
        if len(epochs) != 1:
            raise EpochMismatch(f"bundles span epochs {sorted(epochs)}")
        epoch = epochs.pop()
    return epoch


def check_bundle(pk: LrshaPublicKey, pos: int, epoch: int, b: CommitmentBundle) -> None:
    """Authenticate server ``pos``'s answer for ``epoch``; raises CertFailure."""
    group = pk.params.group
    if b.server != pos:
        raise CertFailure(pos, epoch, "server index mismatch")
    if b.epoch != epoch:
        raise CertFailure(pos, epoch, "epoch mismatch")
    try:
        group.decode_element(b.R)
    except DecodeError:
        raise CertFailure(pos, epoch, "invalid commitment encoding") from None
    v = sgn_verify(group, pk.cert_keys[pos - 1], commit_message(pos, epoch, b.R), b.cert)
    if not v:
        raise CertFailure(pos, epoch, v.reason or "")


def lrsha_aggregate(bundles: Sequence[CommitmentBundle | None], pk: LrshaPublicKey,
                    epoch: int | None = None) -> bytes:
    """Authenticate every bundle and multiply the commitments together."""
    epoch = check_bundle_frame(bundles, pk.params.L, epoch)
    for pos, b in enumerate(bundles, start=1):
        check_bundle(pk, pos, epoch, b)
    return pk.params.group.elem_product([b.R for b in bundles])


def lrsha_verify(pk: LrshaPublicKey, M: bytes, sig: Signature | bytes, R_agg: bytes) -> Verdict:
    group = pk.params.group
    if not isinstance(sig, Signature):
        try:
            sig = Signature.decode(sig)
        except DecodeError:
            return reject("DecodeError")
    if not 1 <= sig.j <= pk.params.J:
        return reject("EpochOutOfRange")
    if sig.s >= group.q:
        return reject("NonCanonicalScalar")
    e = kd.hash_to_scalar(M + sig.x, group.q)
    if not group.verify_eq(R_agg, sig.s, pk.Y, e):
        return reject("BadSignatureEq")
    return ACCEPT
