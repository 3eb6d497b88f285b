import random
from collections import Counter
from unittest import mock

import pytest

from lrsha import flrsha as fl
from lrsha import keyderive as kd
from lrsha.cert import fsgn_verify, merkle_depth
from lrsha.errors import CertFailure, EpochExpired, EpochMismatch, EpochOutOfRange, MissingServer, StateExhausted
from lrsha.group import FLRSHA, RISTRETTO255, TOY, CountingGroup, SchemeParams
from lrsha.signer import decode_signer_key, encode_signer_key, key_payload

import oracle
from support import find_seed, forced_flrsha_key, rng_bytes

BACKENDS = [RISTRETTO255, TOY]
ids = lambda g: g.name  # noqa: E731
t = TOY.encode_int


def setup(group=RISTRETTO255, L=3, J=32, seed=0, tables=True):
    sk, vk, servers = fl.flrsha_keygen(SchemeParams(group, J, L, FLRSHA), rng_bytes(seed))
    if tables:
        for s in servers:
            s.build_tables()
    return sk, vk, servers


def aggregates(vk, servers, j):
    return fl.flrsha_aggregate([fl.flrsha_server_commit(s, j) for s in servers], vk, j)


# -- keygen ---------------------------------------------------------------------------

def test_keygen_shares_seeds():
    sk, vk, servers = setup(L=3)
    for ell, s in enumerate(servers, start=1):
        assert sk.y_seed(ell) == s.y1 and sk.r_seed(ell) == s.r1
    assert vk.roots == tuple(s.fs.root for s in servers)
    assert all(len(r) == 32 for r in vk.roots)
    assert set(vars(vk)) == {"params", "roots"}


def test_server_secret_roundtrip():
    _, _, servers = setup(group=TOY, J=8)
    s = servers[0]
    back = fl.FlrshaServerSecret.from_bytes(s.to_bytes())
    assert (back.y1, back.r1, back.index, back.fs.root) == (s.y1, s.r1, s.index, s.fs.root)


@pytest.mark.slow
def test_nominal_parameters_keygen():
    params = SchemeParams(RISTRETTO255, 2**20, 3, FLRSHA)
    sk, vk, servers = fl.flrsha_keygen(params)
    assert len(servers) == 3 and len(vk.roots) == 3
    assert len(key_payload(sk)) == 2 * 3 * 32 + 16
    assert merkle_depth(2**20) == 20


# -- hand-derived toy case -----------------------------------------------------------------

def test_toy_forced_case():
    key, y1, r1, M = forced_flrsha_key(y=3, r=5, e=7)
    sig = fl.flrsha_sign(key, M)
    assert sig.s == 6 and sig.j == 1 and key.j == 2
    Y, R = fl.epoch_public(TOY, y1, r1)
    assert (Y, R) == (t(8), t(9))
    vk = fl.FlrshaVerifierKey(key.params, (bytes(32),))
    assert fl.flrsha_verify(vk, M, sig, Y, R)


def test_toy_aggregate_y_example():
    ya = find_seed(lambda s: oracle.seed_scalar(s) == 3, b"ya")
    yb = find_seed(lambda s: oracle.seed_scalar(s) == 2, b"yb")
    params = SchemeParams(TOY, 4, 2, FLRSHA)
    from lrsha.cert import fsgn_keygen
    servers = []
    for ell, y1 in enumerate([ya, yb], start=1):
        fs, _ = fsgn_keygen(TOY, 4, rng_bytes(ell))
        servers.append(fl.FlrshaServerSecret(params, ell, y1, b"\x01" * 32, fs))
    vk = fl.FlrshaVerifierKey(params, tuple(s.fs.root for s in servers))
    bundles = [fl.flrsha_server_commit(s, 1) for s in servers]
    assert [b.Y for b in bundles] == [t(8), t(4)]
    Y, _ = fl.flrsha_aggregate(bundles, vk, 1)
    assert Y == t(9)


def test_toy_random_cases_match_oracle():
    rnd = random.Random(30)
    for case in range(200):
        L = rnd.randint(1, 3)
        sk, vk, servers = setup(group=TOY, L=L, J=8, seed=2000 + case, tables=False)
        j = rnd.randint(1, 8)
        y1s = [sk.y_seed(i) for i in range(1, L + 1)]
        r1s = [sk.r_seed(i) for i in range(1, L + 1)]
        for _ in range(j - 1):
            fl.flrsha_update(sk)
        M = rnd.randbytes(rnd.randint(0, 20))
        want = oracle.flrsha_case(y1s, r1s, j, M)
        sig = fl.flrsha_sign(sk, M)
        assert (sig.s, sig.x, sig.j) == (want["s"], want["x"], j)
        Y, R = aggregates(vk, servers, j)
        assert (TOY.to_int(Y), TOY.to_int(R)) == (want["Y"], want["R"])
        assert want["ok"] and bool(fl.flrsha_verify(vk, M, sig, Y, R))


# -- update and signing --------------------------------------------------------------------

def test_update_composes_with_chain():
    sk, _, _ = setup(L=2)
    start = [bytes(sk.chains[i:i + 32]) for i in range(0, len(sk.chains), 32)]
    fl.flrsha_update(fl.flrsha_update(sk))
    now = [bytes(sk.chains[i:i + 32]) for i in range(0, len(sk.chains), 32)]
    assert now == [kd.hash_chain(s, 2) for s in start]
    assert sk.j == 3


def test_update_erases_old_bytes():
    sk, _, _ = setup()
    before = bytes(sk.chains)
    fl.flrsha_update(sk)
    blob = encode_signer_key(sk)
    for i in range(0, len(before), 32):
        assert before[i:i + 32] not in blob


def test_update_at_J():
    sk, _, _ = setup(J=3)
    fl.flrsha_update(sk)
    fl.flrsha_update(sk)
    with pytest.raises(StateExhausted):
        fl.flrsha_update(sk)


def test_sign_J_times_then_exhausted():
    sk, vk, servers = setup(J=8)
    for j in range(1, 9):
        sig = fl.flrsha_sign(sk, b"m")
        assert sig.j == j
    assert sk.exhausted and not any(sk.chains)
    with pytest.raises(StateExhausted):
        fl.flrsha_sign(sk, b"m")


def test_sign_advances_and_forgets():
    sk, _, _ = setup()
    old = bytes(sk.chains)
    fl.flrsha_sign(sk, b"m")
    assert sk.j == 2
    for i in range(0, len(old), 32):
        assert old[i:i + 32] not in bytes(sk.chains)


@pytest.mark.parametrize("g", BACKENDS, ids=ids)
def test_sign_and_update_use_no_exponentiations(g):
    sk, _, _ = setup(group=g, tables=False)
    cg = CountingGroup(g)
    key = fl.FlrshaSignerKey(sk.params.with_group(cg), bytes(sk.chains))
    for n in range(5):
        fl.flrsha_sign(key, b"m%d" % n)
    fl.flrsha_update(key)
    assert cg.counts["exp"] == 0 and cg.counts["mul"] == 0


@pytest.mark.parametrize("L", [1, 3, 5])
def test_sign_cost_shape(L):
    sk, _, _ = setup(L=L, tables=False)
    cg = CountingGroup(RISTRETTO255)
    key = fl.FlrshaSignerKey(sk.params.with_group(cg), bytes(sk.chains))
    calls = Counter()

    def counted(name, fn):
        def inner(*a, **kw):
            calls[name] += 1
            return fn(*a, **kw)
        return inner

    with mock.patch.object(kd, "seed_wide", counted("reduce", kd.seed_wide)), \
            mock.patch.object(kd, "prf_bytes", counted("prf", kd.prf_bytes)), \
            mock.patch.object(kd, "hash_to_scalar", counted("hash", kd.hash_to_scalar)), \
            mock.patch.object(kd, "hash_step", counted("step", kd.hash_step)):
        fl.flrsha_sign(key, b"m")
    assert calls["reduce"] == 2 * L
    assert calls["prf"] == 1
    assert calls["hash"] == 1
    assert calls["step"] == 2 * L  # the embedded update
    assert cg.counts["scalar_sum"] == 2
    assert cg.counts["scalar_mulsub"] == 1
    assert cg.counts["exp"] == 0


def test_key_payload_size():
    for L in (1, 3, 7):
        sk, _, _ = setup(L=L, J=4, tables=False)
        assert len(key_payload(sk)) == 2 * L * 32 + 16
    assert 2 * 3 * 32 + 16 == 208  # 0.2 KB at L=3


def test_restore_continues():
    sk, vk, servers = setup()
    fl.flrsha_sign(sk, b"a")
    back = decode_signer_key(encode_signer_key(sk))
    assert back.j == 2 and bytes(back.chains) == bytes(sk.chains)
    sig = fl.flrsha_sign(back, b"b")
    assert sig.j == 2
    assert fl.flrsha_verify(vk, b"b", sig, *aggregates(vk, servers, 2))


# -- server side -----------------------------------------------------------------------------

def test_table_matches_direct_chain():
    _, vk, servers = setup(J=64, tables=False)
    s = servers[0]
    direct = [s.chain_values(j) for j in range(1, 65)]
    s.build_tables(stride=8)
    assert [s.chain_values(j) for j in range(1, 65)] == direct
    fresh = fl.FlrshaServerSecret.from_bytes(s.to_bytes())
    tabled = fl.FlrshaServerSecret.from_bytes(s.to_bytes())
    tabled.build_tables(stride=5)
    for j in range(1, 65):
        assert fl.flrsha_server_commit(fresh, j).encode() == fl.flrsha_server_commit(tabled, j).encode()


def test_commit_certified_and_bounded():
    _, vk, servers = setup(J=8)
    b = fl.flrsha_server_commit(servers[0], 3)
    msg = fl.commit_message(1, 3, b.Y, b.R)
    assert fsgn_verify(RISTRETTO255, vk.roots[0], 8, 3, msg, b.cert)
    assert fl.FlrshaCommitmentBundle.decode(b.encode()) == b
    with pytest.raises(EpochOutOfRange):
        fl.flrsha_server_commit(servers[0], 9)
    with pytest.raises(EpochExpired):
        fl.flrsha_server_commit(servers[0], 2)


def test_chain_consistency_signer_server():
    sk, _, servers = setup(J=64, L=2)
    for j in range(1, 65):
        for ell, s in enumerate(servers, start=1):
            assert s.chain_values(j) == (sk.y_seed(ell), sk.r_seed(ell))
        if j < 64:
            fl.flrsha_update(sk)


# -- aggregation and verification ----------------------------------------------------------------

@pytest.mark.parametrize("g", BACKENDS, ids=ids)
@pytest.mark.parametrize("L", [1, 2, 3])
def test_pipeline_every_epoch(g, L):
    sk, vk, servers = setup(group=g, L=L)
    for j in range(1, 33):
        sig = fl.flrsha_sign(sk, b"m%d" % j)
        assert fl.flrsha_verify(vk, b"m%d" % j, sig.encode(), *aggregates(vk, servers, j))


def test_y_aggregate_relation():
    sk, vk, servers = setup(J=8)
    g = RISTRETTO255
    for j in range(1, 9):
        y = sum(kd.seed_to_scalar(s.chain_values(j)[0], g.q) for s in servers) % g.q
        Y, _ = aggregates(vk, servers, j)
        assert Y == g.exp(g.generator, y)


def test_signature_only_verifies_at_its_epoch():
    J = 16
    sk, vk, servers = setup(J=J)
    aggs = {j: aggregates(vk, servers, j) for j in range(1, J + 1)}
    for j in range(1, J + 1):
        sig = fl.flrsha_sign(sk, b"m")
        for k in range(1, J + 1):
            assert bool(fl.flrsha_verify(vk, b"m", sig, *aggs[k])) is (k == j)


def test_tampered_y_names_server():
    _, vk, servers = setup()
    b = [fl.flrsha_server_commit(s, 2) for s in servers]
    fake = RISTRETTO255.exp(RISTRETTO255.generator, 99)
    b[1] = fl.FlrshaCommitmentBundle(2, 2, fake, b[1].R, b[1].cert)
    with pytest.raises(CertFailure) as ei:
        fl.flrsha_aggregate(b, vk, 2)
    assert ei.value.server == 2


def test_swapped_fields_rejected():
    _, vk, servers = setup()
    b = [fl.flrsha_server_commit(s, 2) for s in servers]
    b[0] = fl.FlrshaCommitmentBundle(1, 2, b[0].R, b[0].Y, b[0].cert)
    with pytest.raises(CertFailure) as ei:
        fl.flrsha_aggregate(b, vk, 2)
    assert ei.value.server == 1


def test_frame_errors():
    _, vk, servers = setup()
    b = [fl.flrsha_server_commit(s, 2) for s in servers]
    with pytest.raises(MissingServer):
        fl.flrsha_aggregate(b[:2], vk)
    b2 = b[:2] + [fl.flrsha_server_commit(servers[2], 3)]
    with pytest.raises(EpochMismatch):
        fl.flrsha_aggregate(b2, vk)


def test_sign_at_target_epoch():
    sk, vk, servers = setup(J=16)
    ref, _, _ = setup(J=16)
    sig = fl.flrsha_sign(sk, b"m", epoch=5)
    for _ in range(4):
        fl.flrsha_update(ref)
    assert sig.j == 5 and sig.encode() == fl.flrsha_sign(ref, b"m").encode()
    for old in range(1, 6):
        with pytest.raises(EpochExpired):
            fl.flrsha_sign(sk, b"m", epoch=old)
    with pytest.raises(EpochOutOfRange):
        fl.flrsha_sign(sk, b"m", epoch=17)
    assert fl.flrsha_sign(sk, b"m", epoch=6).j == 6
