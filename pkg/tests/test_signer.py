import os

import pytest

from lrsha import flrsha as fl
from lrsha import lrsha as lr
from lrsha.errors import CorruptKeyFile, CountExceedsRemaining, StateExhausted
from lrsha.group import FLRSHA, LRSHA, RISTRETTO255, TOY, SchemeParams
from lrsha.signer import (
    PrecomputeStore,
    decode_signer_key,
    encode_signer_key,
    key_payload,
    load_signer_key,
    precompute,
    save_signer_key,
    sign,
)

from support import rng_bytes

SCHEMES = [LRSHA, FLRSHA]


def keygen(scheme, group=RISTRETTO255, L=3, J=64, seed=0):
    params = SchemeParams(group, J, L, scheme)
    gen = lr.lrsha_keygen if scheme == LRSHA else fl.flrsha_keygen
    return gen(params, rng_bytes(seed))


def same_state(a, b):
    if isinstance(a, fl.FlrshaSignerKey):
        return bytes(a.chains) == bytes(b.chains) and a.j == b.j
    return (a.y, list(a.seeds), a.j) == (b.y, list(b.seeds), b.j)


@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("group", [RISTRETTO255, TOY], ids=lambda g: g.name)
def test_key_file_roundtrip(tmp_path, scheme, group):
    sk, _, _ = keygen(scheme, group)
    sign(sk, b"advance once")
    path = tmp_path / "signer.key"
    save_signer_key(path, sk)
    assert os.stat(path).st_mode & 0o777 == 0o600
    back = load_signer_key(path)
    assert same_state(sk, back)
    assert back.params == sk.params
    assert encode_signer_key(back) == path.read_bytes()


@pytest.mark.parametrize("scheme", SCHEMES)
def test_corrupt_key_file(tmp_path, scheme):
    sk, _, _ = keygen(scheme)
    blob = bytearray(encode_signer_key(sk))
    for pos in (0, 5, 20, len(blob) - 1):
        bad = bytearray(blob)
        bad[pos] ^= 1
        with pytest.raises(CorruptKeyFile):
            decode_signer_key(bytes(bad))
    with pytest.raises(CorruptKeyFile):
        decode_signer_key(bytes(blob[:-3]))
    with pytest.raises(CorruptKeyFile):
        load_signer_key(tmp_path / "missing.key")


@pytest.mark.parametrize("L", [1, 2, 3, 8])
def test_flrsha_payload_size(L):
    sk, _, _ = keygen(FLRSHA, L=L, J=8)
    assert len(key_payload(sk)) == 2 * L * 32 + 16


def test_lrsha_payload_size():
    sk, _, _ = keygen(LRSHA, L=3, J=8)
    assert len(key_payload(sk)) == 32 + 3 * 32 + 16


@pytest.mark.parametrize("scheme", SCHEMES)
def test_precompute_store_size(scheme):
    sk, _, _ = keygen(scheme, L=2, J=2**11)
    store = precompute(sk, 2**11)
    assert len(store.entries) == 2048
    assert store.nbytes - len(store.entries) * store.entry_size < 64
    assert len(store.to_bytes()) == store.nbytes
    assert sk.j == 1  # live key untouched


@pytest.mark.parametrize("scheme", SCHEMES)
def test_precomputed_signatures_match_online(scheme):
    online, _, _ = keygen(scheme, J=128, seed=5)
    offline, _, _ = keygen(scheme, J=128, seed=5)
    store = precompute(offline, 100)
    for n in range(100):
        M = b"m%d" % n
        a = sign(online, M)
        b = sign(offline, M, store)
        assert a.encode() == b.encode()
    assert not store.entries
    assert same_state(online, offline)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_store_runs_out_falls_back(scheme):
    sk, pk, servers = keygen(scheme, J=16)
    ref, _, _ = keygen(scheme, J=16)
    store = precompute(sk, 3, watermark=1)
    sigs = []
    for n in range(6):
        if n == 2:
            assert store.needs_replenish()
        sigs.append(sign(sk, b"x", store))
    assert [s.j for s in sigs] == list(range(1, 7))
    assert [s.encode() for s in sigs] == [sign(ref, b"x").encode() for _ in range(6)]


@pytest.mark.parametrize("scheme", SCHEMES)
def test_precompute_count_bounds(scheme):
    sk, _, _ = keygen(scheme, J=8)
    with pytest.raises(CountExceedsRemaining):
        precompute(sk, 9)
    with pytest.raises(CountExceedsRemaining):
        precompute(sk, -1)
    assert len(precompute(sk, 8).entries) == 8


@pytest.mark.parametrize("scheme", SCHEMES)
def test_store_bytes_roundtrip(scheme):
    sk, _, _ = keygen(scheme, J=32)
    store = precompute(sk, 10, watermark=4)
    back = PrecomputeStore.from_bytes(store.to_bytes())
    assert back == store
    assert back.entries == store.entries
    with pytest.raises(CorruptKeyFile):
        PrecomputeStore.from_bytes(store.to_bytes()[:-1])
    with pytest.raises(CorruptKeyFile):
        PrecomputeStore.from_bytes(b"XXXX" + store.to_bytes()[4:])


def test_stale_entries_dropped():
    sk, _, _ = keygen(LRSHA, J=16)
    store = precompute(sk, 5)
    sign(sk, b"a")
    sign(sk, b"b")
    sign(sk, b"c", store)
    assert sorted(store.entries) == [4, 5]


@pytest.mark.parametrize("scheme", SCHEMES)
def test_exhaustion(scheme):
    sk, _, _ = keygen(scheme, J=4)
    for _ in range(4):
        sign(sk, b"m")
    with pytest.raises(StateExhausted):
        sign(sk, b"m")
    back = decode_signer_key(encode_signer_key(sk))
    with pytest.raises(StateExhausted):
        sign(back, b"m")
