import json
import random
from collections import Counter
from unittest import mock

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrsha import keyderive as kd
from lrsha import lrsha as lr
from lrsha.errors import CertFailure, DecodeError, EpochOutOfRange, ServerUnreachable
from lrsha.group import FLRSHA, LRSHA, RISTRETTO255, TOY, CountingGroup
from lrsha.signer import sign
from lrsha.vclient import (
    AggregateCache,
    DeploymentDescriptor,
    LocalTransport,
    TamperTransport,
    Verifier,
)

from support import deploy

SCHEMES = [LRSHA, FLRSHA]


def flip(pos_byte, bit=1):
    def edit(j, raw):
        b = bytearray(raw)
        b[pos_byte % len(b)] ^= bit
        return bytes(b)
    return edit


# -- descriptor -------------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", SCHEMES)
def test_descriptor_roundtrip(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 16, precompute=False)
    text = d.descriptor.to_json()
    back = DeploymentDescriptor.from_json(text)
    assert back == d.descriptor
    assert back.to_json() == text
    obj = json.loads(text)
    assert ("cert_keys" in obj) == (scheme == LRSHA) and ("Y" in obj) == (scheme == LRSHA)
    assert back.public_key() == d.pk


def test_descriptor_validation():
    d = deploy(LRSHA, RISTRETTO255, 2, 16, precompute=False).descriptor
    good = d.to_dict()

    def bad(**changes):
        obj = {**good, **changes}
        with pytest.raises(DecodeError):
            DeploymentDescriptor.from_dict({k: v for k, v in obj.items() if v is not None})

    bad(version=2)
    bad(Y=None)
    bad(extra=1)
    bad(Y=good["Y"].upper())
    bad(Y="zz" * 32)
    bad(Y=good["Y"][:-2])
    bad(L=3)
    bad(L=0)
    bad(J="16")
    bad(servers=["127.0.0.1:1"])
    bad(servers=["nohost", "127.0.0.1:2"])
    bad(scheme="other")
    bad(backend="p256")
    with pytest.raises(DecodeError):
        DeploymentDescriptor.from_json("{not json")


def test_with_servers():
    d = deploy(FLRSHA, TOY, 2, 8, precompute=False).descriptor
    moved = d.with_servers(["10.0.0.1:1", "10.0.0.2:2"])
    assert moved.servers == ("10.0.0.1:1", "10.0.0.2:2") and moved.keys == d.keys


# -- prefetch ---------------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", SCHEMES)
def test_prefetch_caches_everything(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 32)
    v = d.verifier()
    assert v.prefetch(1, 32) == {"cached": 32, "size": 32, "capacity": 4096}
    for j in range(1, 33):
        assert j in v.cache
    with pytest.raises(EpochOutOfRange):
        v.prefetch(0, 4)
    with pytest.raises(EpochOutOfRange):
        v.prefetch(30, 33)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_tamper_named_and_rest_cached(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 32)
    edit = flip(40)
    t = TamperTransport(LocalTransport(d.servers), 2, lambda j, b: edit(j, b) if j == 7 else b)
    v = Verifier(d.descriptor, t)
    with pytest.raises(CertFailure) as ei:
        v.prefetch(1, 32)
    assert (ei.value.server, ei.value.epoch) == (2, 7)
    assert [(f.server, f.epoch) for f in ei.value.failures] == [(2, 7)]
    assert len(v.cache) == 31 and 7 not in v.cache
    sig_key = d.sk
    for _ in range(6):
        sign(sig_key, b"m")
    verdict = v.verify_message(b"m", sign(sig_key, b"m"))
    assert not verdict and verdict.reason == "CertFailure" and verdict.server == 2


@pytest.mark.parametrize("scheme", SCHEMES)
def test_server_down(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 16)
    servers = list(d.servers)
    servers[2] = None
    v = Verifier(d.descriptor, LocalTransport(servers))
    with pytest.raises(ServerUnreachable) as ei:
        v.prefetch(1, 16)
    assert ei.value.server == 3 and len(v.cache) == 0
    verdict = v.verify_message(b"m", sign(d.sk, b"m"))
    assert verdict.reason == "ServerUnreachable" and verdict.server == 3


def test_short_answer_is_cert_failure():
    d = deploy(LRSHA, RISTRETTO255, 2, 16)

    class Short(LocalTransport):
        def fetch(self, server, lo, hi):
            got = super().fetch(server, lo, hi)
            return got[:-1] if server == 1 else got

    with pytest.raises(CertFailure) as ei:
        Verifier(d.descriptor, Short(d.servers)).prefetch(1, 4)
    assert ei.value.server == 1


# -- online verification -------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", SCHEMES)
@pytest.mark.parametrize("group", [RISTRETTO255, TOY], ids=lambda g: g.name)
def test_warm_and_cold_agree(scheme, group):
    J = 1000
    d = deploy(scheme, group, 2, J)
    warm, cold = d.verifier(), d.verifier()
    warm.prefetch(1, J)
    rnd = random.Random(4)
    for j in range(1, J + 1):
        M = b"m%d" % j
        sig = sign(d.sk, M).encode()
        if rnd.random() < 0.3:
            M = M + b"!"
        a, b = warm.verify_message(M, sig), cold.verify_message(M, sig)
        assert a == b


@pytest.mark.parametrize("scheme", SCHEMES)
def test_warm_verify_cost(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 16)
    cg = CountingGroup(RISTRETTO255)
    v = Verifier(d.descriptor, LocalTransport(d.servers), group=cg)
    v.prefetch(1, 16)
    sig = sign(d.sk, b"m")
    calls = Counter()
    real = kd.hash_to_scalar

    def counted(*a, **kw):
        calls["hash"] += 1
        return real(*a, **kw)

    cg.reset()
    with mock.patch.object(kd, "hash_to_scalar", counted):
        assert v.verify_message(b"m", sig)
    assert cg.counts["exp"] == 2 and cg.counts["mul"] == 1
    assert calls["hash"] == 1


def test_bad_signature_inputs():
    d = deploy(LRSHA, RISTRETTO255, 2, 8)
    v = d.verifier()
    assert v.verify_message(b"m", b"\x00" * 71).reason == "DecodeError"
    sig = sign(d.sk, b"m")
    assert v.verify_message(b"m", lr.Signature(sig.s, sig.x, 9)).reason == "EpochOutOfRange"
    assert v.verify_message(b"m", lr.Signature(sig.s, sig.x, 0)).reason == "EpochOutOfRange"


def test_strict_increasing_policy():
    d = deploy(LRSHA, RISTRETTO255, 2, 8)
    sigs = [sign(d.sk, b"m") for _ in range(3)]
    lax = d.verifier()
    assert all(lax.verify_message(b"m", s) for s in sigs + sigs)
    strict = d.verifier(strict_increasing=True)
    assert strict.verify_message(b"m", sigs[0]) and strict.verify_message(b"m", sigs[2])
    assert strict.verify_message(b"m", sigs[1]).reason == "EpochNotIncreasing"
    assert strict.verify_message(b"m", sigs[2]).reason == "EpochNotIncreasing"
    # a rejected signature does not move the high-water mark
    assert not strict.verify_message(b"x", sign(d.sk, b"m"))
    assert strict.verify_message(b"m", sign(d.sk, b"m"))


def test_lru_capacity():
    c = AggregateCache(3)
    for j in range(1, 4):
        c.put(j, j)
    c.get(1)
    c.put(4, 4)
    assert 2 not in c and 1 in c and len(c) == 3
    with pytest.raises(ValueError):
        AggregateCache(0)
    d = deploy(LRSHA, RISTRETTO255, 2, 32)
    v = d.verifier(cache_capacity=8)
    v.prefetch(1, 32)
    assert len(v.cache) == 8 and 32 in v.cache and 24 not in v.cache


@settings(max_examples=40)
@given(scheme=st.sampled_from(SCHEMES), server=st.integers(1, 3), epoch=st.integers(1, 12),
       byte=st.integers(0, 10**6), bit=st.sampled_from([1, 2, 4, 8, 16, 32, 64, 128]))
def test_fault_attribution(scheme, server, epoch, byte, bit):
    d = _fault_deployments[scheme]
    edit = flip(byte, bit)
    t = TamperTransport(LocalTransport(d.servers), server, lambda j, b: edit(j, b) if j == epoch else b)
    v = Verifier(d.descriptor, t)
    with pytest.raises(CertFailure) as ei:
        v.prefetch(1, 12)
    assert [(f.server, f.epoch) for f in ei.value.failures] == [(server, epoch)]
    assert len(v.cache) == 11


_fault_deployments = {s: deploy(s, RISTRETTO255, 3, 12) for s in SCHEMES}


# -- audit ------------------------------------------------------------------------------------

@pytest.mark.parametrize("scheme", SCHEMES)
def test_audit_all_pass(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 32)
    report = d.verifier().audit_servers([1, 5, 9, 32, 5])
    assert report.all_pass and report.flagged == []
    assert report.epochs == (1, 5, 9, 32)
    assert all(e.checked == 4 for e in report.servers.values())
    assert report.to_dict()["servers"]["2"]["pass"] is True


@pytest.mark.parametrize("scheme", SCHEMES)
def test_audit_flags_random_commitment_server(scheme):
    d = deploy(scheme, RISTRETTO255, 3, 32)
    g = RISTRETTO255
    rnd = random.Random(9)

    def swap_R(j, raw):
        if j < 10:
            return raw
        b = bytearray(raw)
        off = 10 if scheme == LRSHA else 42
        b[off:off + 32] = g.exp(g.generator, rnd.randrange(1, g.q))
        return bytes(b)

    v = Verifier(d.descriptor, TamperTransport(LocalTransport(d.servers), 3, swap_R))
    report = v.audit_servers([3, 12, 20, 31])
    assert report.flagged == [3]
    assert report.servers[3].first_failure == 12
    assert report.servers[3].checked == 1
    assert report.servers[3].reason == "CertFailure"


def test_audit_empty_and_out_of_range():
    d = deploy(LRSHA, RISTRETTO255, 2, 8)
    empty = d.verifier().audit_servers([])
    assert empty.servers == {} and empty.all_pass
    bad = d.verifier().audit_servers([1, 9])
    assert bad.flagged == [1, 2] and bad.servers[1].reason == "EpochOutOfRange"
