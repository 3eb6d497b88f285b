"""FLRSHA: the forward-secure variant.

Signer and server l share two seeds (y_1^l, r_1^l).  Both evolve them with
the same one-way hash each epoch, so the signer only ever holds epoch-j
values and the servers can publish the per-epoch one-time public key
Y_j^l next to the commitment R_j^l, certified under a forward-secure
signature.
"""

from __future__ import annotations

import secrets
import struct
from dataclasses import dataclass, field
from math import isqrt
from typing import Sequence

from . import keyderive as kd
from .cert import (
    Certificate,
    FsCertState,
    RandBytes,
    fsgn_keygen,
    fsgn_sign,
    fsgn_verify,
)
from .errors import (
    ACCEPT,
    CertFailure,
    DecodeError,
    EpochExpired,
    EpochOutOfRange,
    MalformedSecret,
    StateExhausted,
    Verdict,
    reject,
)
from .group import ELEMENT_BYTES, FLRSHA, Group, SchemeParams, group_by_id
from .lrsha import Signature, check_bundle_frame

COMMIT_DOMAIN = b"flrsha/commit/v1"
SEED = kd.SEED_BYTES
_BUNDLE_HEAD = struct.Struct("<HQ")


@dataclass(frozen=True)
class FlrshaCommitmentBundle:
    server: int
    epoch: int
    Y: bytes
    R: bytes
    cert: Certificate

    def encode(self) -> bytes:
        return _BUNDLE_HEAD.pack(self.server, self.epoch) + self.Y + self.R + self.cert.encode()

    @classmethod
    def decode(cls, data: bytes) -> "FlrshaCommitmentBundle":
        data = bytes(data)
        off = _BUNDLE_HEAD.size
        if len(data) < off + 2 * ELEMENT_BYTES:
            raise DecodeError("bundle truncated")
        server, epoch = _BUNDLE_HEAD.unpack_from(data, 0)
        Y = data[off:off + ELEMENT_BYTES]
        R = data[off + ELEMENT_BYTES:off + 2 * ELEMENT_BYTES]
        return cls(server, epoch, Y, R, Certificate.decode(data[off + 2 * ELEMENT_BYTES:]))


def commit_message(server: int, epoch: int, Y: bytes, R: bytes) -> bytes:
    return COMMIT_DOMAIN + _BUNDLE_HEAD.pack(server, epoch) + Y + R


class FlrshaSignerKey:
    """Epoch-j chain values for every server, in one overwritable buffer.

    Layout of :attr:`chains`: ``y^1 .. y^L`` then ``r^1 .. r^L``, 32 bytes each.
    """

    def __init__(self, params: SchemeParams, chains: bytes | bytearray, j: int = 1):
        if len(chains) != 2 * params.L * SEED:
            raise ValueError("chain buffer must hold 2L seeds")
        self.params = params
        self.chains = bytearray(chains)
        self.j = j

    def y_seed(self, ell: int) -> bytes:
        off = (ell - 1) * SEED
        return bytes(self.chains[off:off + SEED])

    def r_seed(self, ell: int) -> bytes:
        off = (self.params.L + ell - 1) * SEED
        return bytes(self.chains[off:off + SEED])

    @property
    def exhausted(self) -> bool:
        return self.j > self.params.J

    @property
    def remaining(self) -> int:
        return max(0, self.params.J - self.j + 1)

    def copy(self) -> "FlrshaSignerKey":
        return FlrshaSignerKey(self.params, bytes(self.chains), self.j)

    def wipe(self) -> None:
        self.chains[:] = bytes(len(self.chains))

    def __repr__(self) -> str:
        return f"FlrshaSignerKey(L={self.params.L}, J={self.params.J}, j={self.j})"


@dataclass(frozen=True)
class FlrshaVerifierKey:
    params: SchemeParams
    roots: tuple[bytes, ...]

    def __post_init__(self) -> None:
        if len(self.roots) != self.params.L:
            raise ValueError("need one forward-secure root per server")


@dataclass
class FlrshaServerSecret:
    params: SchemeParams
    index: int
    y1: bytes = field(repr=False)
    r1: bytes = field(repr=False)
    fs: FsCertState = field(repr=False)
    y_table: kd.ChainTable | None = field(default=None, repr=False)
    r_table: kd.ChainTable | None = field(default=None, repr=False)

    _MAGIC = b"LRSS"
    _HEAD = struct.Struct("<BBBHQQ")

    def __post_init__(self) -> None:
        if not 1 <= self.index <= self.params.L:
            raise ValueError(f"server index must lie in [1, {self.params.L}]")

    def build_tables(self, stride: int | None = None) -> None:
        """Precompute interleaved chain anchors for both chains."""
        J = self.params.J
        stride = stride or max(1, isqrt(J))
        self.y_table = kd.build_chain_table(self.y1, J, stride)
        self.r_table = kd.build_chain_table(self.r1, J, stride)

    def chain_values(self, j: int) -> tuple[bytes, bytes]:
        if self.y_table is not None and self.r_table is not None:
            return kd.chain_lookup(self.y_table, j), kd.chain_lookup(self.r_table, j)
        return kd.hash_chain(self.y1, j - 1), kd.hash_chain(self.r1, j - 1)

    def to_bytes(self) -> bytes:
        p = self.params
        head = self._MAGIC + self._HEAD.pack(1, 2, p.group.backend_id, self.index, p.L, p.J)
        return head + self.y1 + self.r1 + self.fs.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FlrshaServerSecret":
        hsize = 4 + cls._HEAD.size
        if len(data) < hsize + 2 * SEED or data[:4] != cls._MAGIC:
            raise MalformedSecret("not an FLRSHA server secret")
        version, code, backend, index, L, J = cls._HEAD.unpack_from(data, 4)
        if version != 1 or code != 2:
            raise MalformedSecret("not an FLRSHA server secret")
        try:
            group = group_by_id(backend)
            params = SchemeParams(group, J, L, FLRSHA)
            y1 = data[hsize:hsize + SEED]
            r1 = data[hsize + SEED:hsize + 2 * SEED]
            fs = FsCertState.from_bytes(data[hsize + 2 * SEED:], group)
            if fs.J != J:
                raise DecodeError("certificate state covers a different J")
            return cls(params, index, y1, r1, fs)
        except (DecodeError, ValueError) as exc:
            raise MalformedSecret(str(exc)) from None


def flrsha_keygen(params: SchemeParams, rng: RandBytes | None = None):
    """Return ``(signer_key, verifier_key, server_secrets)``."""
    rng = rng or secrets.token_bytes
    if params.scheme != FLRSHA:
        params = SchemeParams(params.group, params.J, params.L, FLRSHA)
    servers = []
    for index in range(1, params.L + 1):
        fs, _ = fsgn_keygen(params.group, params.J, rng)
        y1, r1 = rng(SEED), rng(SEED)
        servers.append(FlrshaServerSecret(params, index, y1, r1, fs))
    chains = b"".join(s.y1 for s in servers) + b"".join(s.r1 for s in servers)
    key = FlrshaSignerKey(params, chains)
    vk = FlrshaVerifierKey(params, tuple(s.fs.root for s in servers))
    return key, vk, servers


def _advance(key: FlrshaSignerKey) -> None:
    buf = key.chains
    view = memoryview(buf)
    for off in range(0, len(buf), SEED):
        buf[off:off + SEED] = kd.hash_step(view[off:off + SEED])
    view.release()
    key.j += 1


def flrsha_update(key: FlrshaSignerKey) -> FlrshaSignerKey:
    """Evolve every chain value one step and erase the old ones (in place)."""
    if key.j >= key.params.J:
        raise StateExhausted(f"cannot update past epoch {key.params.J}")
    _advance(key)
    return key


def epoch_material(key: FlrshaSignerKey) -> tuple[int, int, bytes]:
    """``(y_j^{1,L}, r_j^{1,L}, x_j)`` for the key's current epoch."""
    group = key.params.group
    L = key.params.L
    with memoryview(key.chains) as view:
        wide = [kd.seed_wide(view[i * SEED:(i + 1) * SEED]) for i in range(2 * L)]
    # reducing after the sum equals summing the reduced chain scalars
    y_sum = group.scalar_sum(wide[:L])
    r_sum = group.scalar_sum(wide[L:])
    x = kd.prf_bytes(group.encode_scalar(y_sum), key.j, kd.TAG_MASK)
    return y_sum, r_sum, x


def sign_with_material(key: FlrshaSignerKey, M: bytes, y_sum: int, r_sum: int, x: bytes) -> Signature:
    """Finish a signature for the current epoch and consume that epoch."""
    group = key.params.group
    e = kd.hash_to_scalar(M + x, group.q)
    sig = Signature(group.scalar_mulsub(r_sum, e, y_sum), x, key.j)
    if key.j < key.params.J:
        _advance(key)
    else:
        key.wipe()
        key.j += 1
    return sig


def flrsha_sign(key: FlrshaSignerKey, M: bytes, epoch: int | None = None) -> Signature:
    """Sign at the key's current epoch, or fast-forward to ``epoch`` first.

    Epochs already passed cannot be targeted: their chain values are gone.
    """
    if key.j > key.params.J:
        raise StateExhausted(f"all {key.params.J} epochs used")
    if epoch is not None:
        if epoch < key.j:
            raise EpochExpired(f"epoch {epoch} already passed (signer at {key.j})")
        if epoch > key.params.J:
            raise EpochOutOfRange(f"epoch {epoch} outside [1, {key.params.J}]")
        while key.j < epoch:
            _advance(key)
    y_sum, r_sum, x = epoch_material(key)
    return sign_with_material(key, M, y_sum, r_sum, x)


def epoch_public(group: Group, y_seed: bytes, r_seed: bytes) -> tuple[bytes, bytes]:
    Y = group.exp(group.generator, kd.seed_to_scalar(y_seed, group.q))
    R = group.exp(group.generator, kd.seed_to_scalar(r_seed, group.q))
    return Y, R


def flrsha_server_commit(secret: FlrshaServerSecret, j: int) -> FlrshaCommitmentBundle:
    """Derive and certify epoch ``j``; the certificate key moves to ``j``."""
    if not 1 <= j <= secret.params.J:
        raise EpochOutOfRange(f"epoch {j} outside [1, {secret.params.J}]")
    group = secret.params.group
    y_seed, r_seed = secret.chain_values(j)
    Y, R = epoch_public(group, y_seed, r_seed)
    cert = fsgn_sign(secret.fs, j, commit_message(secret.index, j, Y, R))
    return FlrshaCommitmentBundle(secret.index, j, Y, R, cert)


def check_bundle(vk: FlrshaVerifierKey, pos: int, epoch: int, b: FlrshaCommitmentBundle) -> None:
    """Authenticate server ``pos``'s answer for ``epoch``; raises CertFailure."""
    group = vk.params.group
    if b.server != pos:
        raise CertFailure(pos, epoch, "server index mismatch")
    if b.epoch != epoch:
        raise CertFailure(pos, epoch, "epoch mismatch")
    try:
        group.decode_element(b.Y)
        group.decode_element(b.R)
    except DecodeError:
        raise CertFailure(pos, epoch, "invalid element encoding") from None
    v = fsgn_verify(group, vk.roots[pos - 1], vk.params.J, epoch,
                    commit_message(pos, epoch, b.Y, b.R), b.cert)
    if not v:
        raise CertFailure(pos, epoch, v.reason or "")


def flrsha_aggregate(bundles: Sequence[FlrshaCommitmentBundle | None], vk: FlrshaVerifierKey,
                     epoch: int | None = None) -> tuple[bytes, bytes]:
    group = vk.params.group
    epoch = check_bundle_frame(bundles, vk.params.L, epoch)
    if not 1 <= epoch <= vk.params.J:
        raise EpochOutOfRange(f"epoch {epoch} outside [1, {vk.params.J}]")
    for pos, b in enumerate(bundles, start=1):
        check_bundle(vk, pos, epoch, b)
    Y_agg = group.elem_product([b.Y for b in bundles])
    R_agg = group.elem_product([b.R for b in bundles])
    return Y_agg, R_agg


def flrsha_verify(vk: FlrshaVerifierKey, M: bytes, sig: Signature | bytes,
                  Y_agg: bytes, R_agg: bytes) -> Verdict:
    group = vk.params.group
    if not isinstance(sig, Signature):
        try:
            sig = Signature.decode(sig)
        except DecodeError:
            return reject("DecodeError")
    if not 1 <= sig.j <= vk.params.J:
        return reject("EpochOutOfRange")
    if sig.s >= group.q:
        return reject("NonCanonicalScalar")
    e = kd.hash_to_scalar(M + sig.x, group.q)
    if not group.verify_eq(R_agg, sig.s, Y_agg, e):
        return reject("BadSignatureEq")
    return ACCEPT
