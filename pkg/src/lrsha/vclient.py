"""Verifier side: deployment descriptors, bundle fetching and verification.

The offline half (:meth:`Verifier.prefetch`) pulls bundles from every server,
authenticates each certificate and caches the per-epoch aggregate.  The
online half (:meth:`Verifier.verify_message`) is then one hash and two
exponentiations, the same as a plain Schnorr verification.
"""

from __future__ import annotations

import json
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import flrsha as fl
from . import lrsha as lr
from . import wire
from .errors import (
    CertFailure,
    DecodeError,
    EpochOutOfRange,
    LrshaError,
    ProtocolError,
    ServerUnreachable,
    Verdict,
    reject,
)
from .group import FLRSHA, LRSHA, SCHEMES, Group, SchemeParams, get_group

DESCRIPTOR_VERSION = 1
DEFAULT_CACHE_CAPACITY = 4096
FETCH_CHUNK = 1024


# -- deployment descriptor --------------------------------------------------

def _hex32(value, what: str) -> str:
    if not isinstance(value, str) or len(value) != 64:
        raise DecodeError(f"{what} must be 64 hex characters")
    try:
        bytes.fromhex(value)
    except ValueError:
        raise DecodeError(f"{what} is not hex") from None
    if value != value.lower():
        raise DecodeError(f"{what} must be lowercase hex")
    return value


@dataclass(frozen=True)
class DeploymentDescriptor:
    """Public parameters a verifier needs: endpoints, cert keys or FS roots, Y."""

    scheme: str
    backend: str
    L: int
    J: int
    servers: tuple[str, ...]
    keys: tuple[bytes, ...]
    Y: bytes | None = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise DecodeError(f"unknown scheme {self.scheme!r}")
        get_group(self.backend)
        if len(self.servers) != self.L or len(self.keys) != self.L:
            raise DecodeError("server and key lists must both have L entries")
        for addr in self.servers:
            wire.parse_address(addr)
        if (self.Y is None) != (self.scheme == FLRSHA):
            raise DecodeError("Y is required for lrsha and absent for flrsha")

    @property
    def params(self) -> SchemeParams:
        return SchemeParams(get_group(self.backend), self.J, self.L, self.scheme)

    def public_key(self, group: Group | None = None):
        params = self.params if group is None else self.params.with_group(group)
        if self.scheme == LRSHA:
            return lr.LrshaPublicKey(params, self.Y, self.keys)
        return fl.FlrshaVerifierKey(params, self.keys)

    def with_servers(self, servers: Sequence[str]) -> "DeploymentDescriptor":
        return DeploymentDescriptor(self.scheme, self.backend, self.L, self.J,
                                    tuple(servers), self.keys, self.Y)

    @classmethod
    def from_public_key(cls, pk, servers: Sequence[str]) -> "DeploymentDescriptor":
        p = pk.params
        if isinstance(pk, lr.LrshaPublicKey):
            return cls(LRSHA, p.group.name, p.L, p.J, tuple(servers), pk.cert_keys, pk.Y)
        return cls(FLRSHA, p.group.name, p.L, p.J, tuple(servers), pk.roots)

    def to_dict(self) -> dict:
        d = {
            "version": DESCRIPTOR_VERSION,
            "scheme": self.scheme,
            "backend": self.backend,
            "L": self.L,
            "J": self.J,
            "servers": list(self.servers),
            "cert_keys" if self.scheme == LRSHA else "fs_roots": [k.hex() for k in self.keys],
        }
        if self.Y is not None:
            d["Y"] = self.Y.hex()
        return d

    def to_json(self) -> bytes:
        return wire.canonical_json(self.to_dict()) + b"\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DeploymentDescriptor":
        if not isinstance(d, dict) or d.get("version") != DESCRIPTOR_VERSION:
            raise DecodeError("unsupported descriptor version")
        scheme = d.get("scheme")
        key_field = "cert_keys" if scheme == LRSHA else "fs_roots"
        allowed = {"version", "scheme", "backend", "L", "J", "servers", key_field}
        if scheme == LRSHA:
            allowed.add("Y")
        if set(d) != allowed:
            raise DecodeError(f"descriptor fields must be {sorted(allowed)}")
        L, J = d["L"], d["J"]
        if not isinstance(L, int) or not isinstance(J, int) or L < 1 or J < 1:
            raise DecodeError("L and J must be positive integers")
        servers, keys = d["servers"], d[key_field]
        if not isinstance(servers, list) or not isinstance(keys, list):
            raise DecodeError("servers and keys must be lists")
        try:
            return cls(scheme, d["backend"], L, J, tuple(servers),
                       tuple(bytes.fromhex(_hex32(k, key_field)) for k in keys),
                       bytes.fromhex(_hex32(d["Y"], "Y")) if scheme == LRSHA else None)
        except (TypeError, ValueError) as exc:
            raise DecodeError(str(exc)) from None

    @classmethod
    def from_json(cls, data: bytes | str) -> "DeploymentDescriptor":
        try:
            return cls.from_dict(json.loads(data))
        except json.JSONDecodeError as exc:
            raise DecodeError(f"descriptor is not JSON: {exc}") from None


# -- transports -------------------------------------------------------------

class Transport:
    """Fetches raw bundle bytes for ``[lo, hi]`` from server ``server``."""

    def fetch(self, server: int, lo: int, hi: int) -> list[bytes]:
        raise NotImplementedError


class TcpTransport(Transport):
    def __init__(self, scheme: str, addresses: Sequence[str], timeout: float = 10.0,
                 chunk: int = FETCH_CHUNK):
        self.scheme = scheme
        self.addresses = [wire.parse_address(a) for a in addresses]
        self.timeout = timeout
        self.chunk = chunk

    def fetch(self, server: int, lo: int, hi: int) -> list[bytes]:
        out: list[bytes] = []
        addr = self.addresses[server - 1]
        for a in range(lo, hi + 1, self.chunk):
            b = min(hi, a + self.chunk - 1)
            try:
                resp = wire.call(addr, wire.batch_request(self.scheme, server, a, b), self.timeout)
                out.extend(wire.parse_bundles(resp))
            except (OSError, ConnectionError) as exc:
                raise ServerUnreachable(server, str(exc)) from None
            except ProtocolError as exc:
                raise ServerUnreachable(server, f"server refused: {exc}") from None
        return out


class LocalTransport(Transport):
    """Calls in-process :class:`~lrsha.comc.ComcServer` objects directly."""

    def __init__(self, servers: Sequence):
        self.servers = list(servers)

    def fetch(self, server: int, lo: int, hi: int) -> list[bytes]:
        srv = self.servers[server - 1]
        if srv is None:
            raise ServerUnreachable(server, "server is down")
        try:
            return srv.serve_batch(lo, hi)
        except LrshaError as exc:
            raise ServerUnreachable(server, f"server refused: {exc}") from None


class TamperTransport(Transport):
    """Wraps a transport and rewrites one server's answers (fault injection)."""

    def __init__(self, inner: Transport, server: int, edit: Callable[[int, bytes], bytes]):
        self.inner = inner
        self.server = server
        self.edit = edit

    def fetch(self, server: int, lo: int, hi: int) -> list[bytes]:
        got = self.inner.fetch(server, lo, hi)
        if server != self.server:
            return got
        return [self.edit(lo + i, b) for i, b in enumerate(got)]


# -- aggregate cache --------------------------------------------------------

class AggregateCache:
    """LRU map epoch -> aggregate (``R`` or ``(Y, R)``)."""

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: OrderedDict[int, object] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, j: int) -> bool:
        return j in self._data

    def get(self, j: int):
        with self._lock:
            v = self._data.get(j)
            if v is not None:
                self._data.move_to_end(j)
            return v

    def put(self, j: int, value) -> None:
        with self._lock:
            self._data[j] = value
            self._data.move_to_end(j)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()


# -- verifier ---------------------------------------------------------------

@dataclass
class AuditEntry:
    server: int
    checked: int = 0
    first_failure: int | None = None
    reason: str | None = None

    @property
    def passed(self) -> bool:
        return self.first_failure is None and self.reason is None


@dataclass
class AuditReport:
    epochs: tuple[int, ...]
    servers: dict[int, AuditEntry] = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(e.passed for e in self.servers.values())

    @property
    def flagged(self) -> list[int]:
        return [s for s, e in self.servers.items() if not e.passed]

    def to_dict(self) -> dict:
        return {
            "epochs": list(self.epochs),
            "servers": {str(s): {"pass": e.passed, "checked": e.checked,
                                 "first_failure": e.first_failure, "reason": e.reason}
                        for s, e in self.servers.items()},
        }


class Verifier:
    def __init__(self, descriptor: DeploymentDescriptor, transport: Transport | None = None, *,
                 cache_capacity: int = DEFAULT_CACHE_CAPACITY, strict_increasing: bool = False,
                 group: Group | None = None, timeout: float = 10.0):
        self.descriptor = descriptor
        self.scheme = descriptor.scheme
        self.pk = descriptor.public_key(group)
        self.params = self.pk.params
        self.transport = transport or TcpTransport(descriptor.scheme, descriptor.servers, timeout)
        self.cache = AggregateCache(cache_capacity)
        self.strict_increasing = strict_increasing
        self._last_j = 0
        self._policy_lock = threading.Lock()

    # offline ---------------------------------------------------------------
    def _check_range(self, lo: int, hi: int) -> None:
        J = self.params.J
        if not (1 <= lo <= hi <= J):
            raise EpochOutOfRange(f"range [{lo}, {hi}] outside [1, {J}]")

    def _fetch_all(self, lo: int, hi: int) -> dict[int, list[bytes] | LrshaError]:
        L = self.params.L

        def one(server: int):
            try:
                return self.transport.fetch(server, lo, hi)
            except LrshaError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=L) as pool:
            results = list(pool.map(one, range(1, L + 1)))
        return dict(zip(range(1, L + 1), results))

    def _decode(self, pos: int, j: int, raw: bytes):
        cls = lr.CommitmentBundle if self.scheme == LRSHA else fl.FlrshaCommitmentBundle
        try:
            return cls.decode(raw)
        except DecodeError as exc:
            raise CertFailure(pos, j, f"undecodable bundle: {exc}") from None

    def _aggregate(self, j: int, raws: Sequence[bytes]):
        bundles = [self._decode(pos, j, raw) for pos, raw in enumerate(raws, start=1)]
        if self.scheme == LRSHA:
            return lr.lrsha_aggregate(bundles, self.pk, j)
        return fl.flrsha_aggregate(bundles, self.pk, j)

    def prefetch(self, lo: int, hi: int) -> dict:
        """Fetch, authenticate and cache aggregates for ``[lo, hi]``.

        Epochs whose bundles all authenticate are cached even when others
        fail; the first failure is then raised with the full list attached
        as ``exc.failures``.
        """
        self._check_range(lo, hi)
        results = self._fetch_all(lo, hi)
        for server, res in results.items():
            if isinstance(res, LrshaError):
                raise res
            if len(res) != hi - lo + 1:
                raise CertFailure(server, None, f"returned {len(res)} bundles for {hi - lo + 1} epochs")
        failures: list[CertFailure] = []
        cached = 0
        L = self.params.L
        for i, j in enumerate(range(lo, hi + 1)):
            try:
                agg = self._aggregate(j, [results[s][i] for s in range(1, L + 1)])
            except CertFailure as exc:
                failures.append(exc)
                continue
            self.cache.put(j, agg)
            cached += 1
        if failures:
            first = failures[0]
            first.failures = failures
            raise first
        return {"cached": cached, "size": len(self.cache), "capacity": self.cache.capacity}

    def aggregate_for(self, j: int):
        agg = self.cache.get(j)
        if agg is None:
            self.prefetch(j, j)
            agg = self.cache.get(j)
        return agg

    # online ----------------------------------------------------------------
    def verify_message(self, M: bytes, sig: lr.Signature | bytes) -> Verdict:
        if not isinstance(sig, lr.Signature):
            try:
                sig = lr.Signature.decode(sig)
            except DecodeError:
                return reject("DecodeError")
        if not 1 <= sig.j <= self.params.J:
            return reject("EpochOutOfRange")
        if self.strict_increasing and sig.j <= self._last_j:
            return reject("EpochNotIncreasing")
        try:
            agg = self.aggregate_for(sig.j)
        except CertFailure as exc:
            return reject("CertFailure", exc.server)
        except ServerUnreachable as exc:
            return reject("ServerUnreachable", exc.server)
        if self.scheme == LRSHA:
            verdict = lr.lrsha_verify(self.pk, M, sig, agg)
        else:
            verdict = fl.flrsha_verify(self.pk, M, sig, *agg)
        if verdict and self.strict_increasing:
            with self._policy_lock:
                if sig.j <= self._last_j:
                    return reject("EpochNotIncreasing")
                self._last_j = sig.j
        return verdict

    # audit -----------------------------------------------------------------
    def audit_servers(self, epochs: Sequence[int]) -> AuditReport:
        """Check each server's certificates individually over sampled epochs."""
        sample = tuple(sorted(set(epochs)))
        report = AuditReport(sample)
        if not sample:
            return report
        check = lr.check_bundle if self.scheme == LRSHA else fl.check_bundle
        for server in range(1, self.params.L + 1):
            entry = AuditEntry(server)
            report.servers[server] = entry
            for j in sample:
                if not 1 <= j <= self.params.J:
                    entry.first_failure, entry.reason = j, "EpochOutOfRange"
                    break
                try:
                    raws = self.transport.fetch(server, j, j)
                    if len(raws) != 1:
                        raise CertFailure(server, j, "wrong bundle count")
                    check(self.pk, server, j, self._decode(server, j, raws[0]))
                except (CertFailure, ServerUnreachable) as exc:
                    entry.first_failure, entry.reason = j, exc.reason
                    break
                entry.checked += 1
        return report
