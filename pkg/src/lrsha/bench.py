"""Micro-benchmarks against a plain Schnorr signer on the same group.

Absolute times depend on the machine; what the report is for is the ratio
between the schemes and the baseline, plus exponentiation counts and sizes
measured from real encodings.
"""

from __future__ import annotations

import gc
import os
import platform
import statistics
import sys
import time
from typing import Callable

import jsonschema

from . import flrsha as fl
from . import lrsha as lr
from .baseline import schnorr_keygen, schnorr_sign, schnorr_verify
from .group import FLRSHA, LRSHA, RISTRETTO255, CountingGroup, Group, SchemeParams
from .signer import encode_signer_key, key_payload

MIN_ITERATIONS = 1000
WARMUP = 20

REPORT_SCHEMA = {
    "type": "object",
    "required": ["version", "iterations", "backend", "environment", "baseline", "schemes"],
    "properties": {
        "version": {"const": 1},
        "iterations": {"type": "integer", "minimum": MIN_ITERATIONS},
        "backend": {"type": "string"},
        "L": {"type": "integer", "minimum": 1},
        "environment": {
            "type": "object",
            "required": ["python", "implementation", "platform", "machine", "cpus"],
        },
        "baseline": {
            "type": "object",
            "required": ["sign_us", "verify_us", "sign_exps", "verify_exps", "sig_bytes"],
        },
        "schemes": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["sign_us", "verify_online_us", "commit_us", "sign_exps",
                             "verify_online_exps", "commit_exps", "sizes", "speedup_vs_baseline"],
                "properties": {
                    "sign_us": {"type": "number", "exclusiveMinimum": 0},
                    "verify_online_us": {"type": "number", "exclusiveMinimum": 0},
                    "commit_us": {"type": "number", "exclusiveMinimum": 0},
                    "sign_exps": {"type": "integer", "minimum": 0},
                    "verify_online_exps": {"type": "integer", "minimum": 0},
                    "commit_exps": {"type": "integer", "minimum": 0},
                    "speedup_vs_baseline": {"type": "number"},
                    "sizes": {
                        "type": "object",
                        "required": ["signature", "signer_key_payload", "signer_key_file",
                                     "bundle", "server_secret"],
                        "additionalProperties": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
    },
}


def environment() -> dict:
    return {
        "python": sys.version.split()[0],
        "implementation": platform.python_implementation(),
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpus": os.cpu_count() or 1,
    }


def median_us(fn: Callable[[], object], iterations: int) -> float:
    """Median wall time of ``fn`` in microseconds, with GC paused."""
    samples = []
    clock = time.perf_counter_ns
    enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(iterations):
            t0 = clock()
            fn()
            samples.append(clock() - t0)
    finally:
        if enabled:
            gc.enable()
    return statistics.median(samples) / 1000.0


def _count_exps(group: CountingGroup, fn: Callable[[], object]) -> int:
    group.reset()
    fn()
    return group.counts["exp"]


def bench_baseline(group: Group, iterations: int) -> dict:
    key = schnorr_keygen(group)
    M = b"benchmark message"
    for _ in range(WARMUP):
        schnorr_sign(key, M)
    sig = schnorr_sign(key, M)
    counting = CountingGroup(group)
    ckey = type(key)(counting, key.x, key.X)
    return {
        "sign_us": median_us(lambda: schnorr_sign(key, M), iterations),
        "verify_us": median_us(lambda: schnorr_verify(group, key.X, M, sig), iterations),
        "sign_exps": _count_exps(counting, lambda: schnorr_sign(ckey, M)),
        "verify_exps": _count_exps(counting, lambda: schnorr_verify(counting, key.X, M, sig)),
        "sig_bytes": len(sig),
        "key_bytes": len(group.encode_scalar(key.x)),
    }


def bench_scheme(scheme: str, group: Group, L: int, iterations: int) -> dict:
    J = iterations + 2 * WARMUP + 2
    params = SchemeParams(group, J, L, scheme)
    counting = CountingGroup(group)
    M = b"benchmark message"
    if scheme == LRSHA:
        sk, pk, servers = lr.lrsha_keygen(params)
        sign, commit = lr.lrsha_sign, lr.lrsha_server_commit
    else:
        sk, pk, servers = fl.flrsha_keygen(params)
        sign, commit = fl.flrsha_sign, fl.flrsha_server_commit
        for s in servers:
            s.build_tables()
    secret_bytes = len(servers[0].to_bytes())

    # exponentiation counts on a throwaway key bound to the counting group
    ckey = _rebind(sk, params.with_group(counting))
    sign_exps = _count_exps(counting, lambda: sign(ckey, M))

    for _ in range(WARMUP):
        sign(sk, M)
    sig = sign(sk, M)
    j = sig.j
    bundles = [commit(s, j) for s in servers]
    bundle_bytes = len(bundles[0].encode())
    cpk = _rebind_public(pk, params.with_group(counting))
    if scheme == LRSHA:
        agg = lr.lrsha_aggregate(bundles, pk, j)
        verify = lambda: lr.lrsha_verify(pk, M, sig, agg)  # noqa: E731
        cverify = lambda: lr.lrsha_verify(cpk, M, sig, agg)  # noqa: E731
    else:
        agg = fl.flrsha_aggregate(bundles, pk, j)
        verify = lambda: fl.flrsha_verify(pk, M, sig, *agg)  # noqa: E731
        cverify = lambda: fl.flrsha_verify(cpk, M, sig, *agg)  # noqa: E731
    if not verify():
        raise RuntimeError(f"{scheme} benchmark signature does not verify")

    sign_us = median_us(lambda: sign(sk, M), iterations)

    # server commitments walk forward through fresh epochs (FS keys only move on)
    epochs = iter(range(j + 1, J))
    srv = servers[0]
    commit_us = median_us(lambda: commit(srv, next(epochs)), min(iterations, J - j - 1))
    commit_exps = _count_exps(counting, lambda: commit(_rebind_server(srv, counting), J))

    payload = key_payload(sk)
    return {
        "sign_us": sign_us,
        "verify_online_us": median_us(verify, iterations),
        "commit_us": commit_us,
        "sign_exps": sign_exps,
        "verify_online_exps": _count_exps(counting, cverify),
        "commit_exps": commit_exps,
        "sizes": {
            "signature": len(sig.encode()),
            "signer_key_payload": len(payload),
            "signer_key_file": len(encode_signer_key(sk)),
            "bundle": bundle_bytes,
            "server_secret": secret_bytes,
        },
    }


def _rebind(sk, params):
    if isinstance(sk, lr.LrshaSignerKey):
        return lr.LrshaSignerKey(params, sk.y, list(sk.seeds), sk.j)
    return fl.FlrshaSignerKey(params, bytes(sk.chains), sk.j)


def _rebind_public(pk, params):
    if isinstance(pk, lr.LrshaPublicKey):
        return lr.LrshaPublicKey(params, pk.Y, pk.cert_keys)
    return fl.FlrshaVerifierKey(params, pk.roots)


def _rebind_server(srv, group):
    params = srv.params.with_group(group)
    if isinstance(srv, lr.LrshaServerSecret):
        return lr.LrshaServerSecret(params, srv.index, srv.cert, srv.seed)
    fs = srv.fs.copy()
    fs.group = group
    return fl.FlrshaServerSecret(params, srv.index, srv.y1, srv.r1, fs, srv.y_table, srv.r_table)


def run(schemes=(LRSHA, FLRSHA), iterations: int = MIN_ITERATIONS, L: int = 3,
        group: Group = RISTRETTO255) -> dict:
    if iterations < MIN_ITERATIONS:
        raise ValueError(f"need at least {MIN_ITERATIONS} iterations")
    base = bench_baseline(group, iterations)
    report = {
        "version": 1,
        "iterations": iterations,
        "backend": group.name,
        "L": L,
        "environment": environment(),
        "baseline": base,
        "schemes": {},
    }
    for scheme in schemes:
        r = bench_scheme(scheme, group, L, iterations)
        r["speedup_vs_baseline"] = base["sign_us"] / r["sign_us"]
        report["schemes"][scheme] = r
    validate(report)
    return report


def validate(report: dict) -> None:
    jsonschema.validate(report, REPORT_SCHEMA)


def markdown(report: dict) -> str:
    base = report["baseline"]
    lines = [
        f"Backend {report['backend']}, L={report['L']}, {report['iterations']} iterations (medians, µs)",
        "",
        "| scheme | sign | verify (online) | commit | sign exps | verify exps | speedup | sig bytes | key payload |",
        "|---|---|---|---|---|---|---|---|---|",
        f"| schnorr | {base['sign_us']:.2f} | {base['verify_us']:.2f} | - | {base['sign_exps']} "
        f"| {base['verify_exps']} | 1.00 | {base['sig_bytes']} | {base['key_bytes']} |",
    ]
    for name, r in report["schemes"].items():
        s = r["sizes"]
        lines.append(
            f"| {name} | {r['sign_us']:.2f} | {r['verify_online_us']:.2f} | {r['commit_us']:.2f} "
            f"| {r['sign_exps']} | {r['verify_online_exps']} | {r['speedup_vs_baseline']:.2f} "
            f"| {s['signature']} | {s['signer_key_payload']} |")
    return "\n".join(lines) + "\n"
