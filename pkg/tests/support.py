"""Shared builders for tests: in-process deployments and forced toy keys."""

import itertools
import random
from types import SimpleNamespace

from lrsha import keyderive as kd
from lrsha.comc import ComcServer
from lrsha.flrsha import FlrshaSignerKey, flrsha_keygen
from lrsha.group import FLRSHA, LRSHA, TOY, SchemeParams
from lrsha.keystore import InMemoryKeystore
from lrsha.lrsha import LrshaSignerKey, lrsha_keygen
from lrsha.vclient import DeploymentDescriptor, LocalTransport, Verifier

import oracle


def rng_bytes(seed):
    return random.Random(seed).randbytes


def deploy(scheme, group, L, J, seed=0, precompute=True, **server_kw):
    """Keys, provisioned in-process servers and a verifier wired to them."""
    params = SchemeParams(group, J, L, scheme)
    keygen = lrsha_keygen if scheme == LRSHA else flrsha_keygen
    sk, pk, secrets = keygen(params, rng_bytes(seed))
    blobs = [s.to_bytes() for s in secrets]
    servers = []
    for s, blob in zip(secrets, blobs):
        c = ComcServer(scheme, s.index, InMemoryKeystore(), **server_kw)
        c.provision(blob)
        if precompute and scheme == FLRSHA:
            c.precompute(1, J)
        servers.append(c)
    desc = DeploymentDescriptor.from_public_key(pk, [f"127.0.0.1:{7000 + i}" for i in range(1, L + 1)])
    return SimpleNamespace(params=params, sk=sk, pk=pk, secrets=secrets, blobs=blobs,
                           servers=servers, descriptor=desc,
                           verifier=lambda **kw: Verifier(desc, LocalTransport(servers), **kw))


def find_seed(pred, tag=b"seed"):
    """First 32-byte seed (deterministic search) satisfying ``pred``."""
    for n in itertools.count():
        s = kd.hash_step(tag + n.to_bytes(8, "little"))
        if pred(s):
            return s


def find_message(pred, prefix=b"msg-"):
    for n in itertools.count():
        m = prefix + str(n).encode()
        if pred(m):
            return m


def forced_lrsha_key(y=3, r=5, e=7, j=1):
    """Toy L=1 key whose epoch-``j`` nonce is ``r``, plus a message forcing ``e``."""
    params = SchemeParams(TOY, 8, 1, LRSHA)
    seed = find_seed(lambda s: oracle.nonce(s, j) == r)
    key = LrshaSignerKey(params, y, [seed], j)
    x = oracle.mask(y, j)
    M = find_message(lambda m: oracle.challenge(m + x) == e)
    return key, seed, M


def forced_flrsha_key(y=3, r=5, e=7):
    params = SchemeParams(TOY, 8, 1, FLRSHA)
    y1 = find_seed(lambda s: oracle.seed_scalar(s) == y, b"y")
    r1 = find_seed(lambda s: oracle.seed_scalar(s) == r, b"r")
    key = FlrshaSignerKey(params, y1 + r1, 1)
    x = oracle.mask(y, 1)
    M = find_message(lambda m: oracle.challenge(m + x) == e)
    return key, y1, r1, M


def server_secret_bytes(secret):
    """Byte strings that must never leave a server's keystore."""
    out = []
    if hasattr(secret, "seed"):
        out += [secret.seed, secret.params.group.encode_scalar(secret.cert.secret)]
    else:
        out += [secret.y1, secret.r1, bytes(secret.fs._chain)]
    return [b for b in out if any(b)]


def contains_any(blob, needles):
    for n in needles:
        if n in blob or n.hex().encode() in blob or n.hex().upper().encode() in blob:
            return True
    return False
