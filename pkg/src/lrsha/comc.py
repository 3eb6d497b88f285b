"""Commitment-construction server.

Holds one sealed server secret and answers epoch queries with certified
commitment bundles, either derived on demand or from a precomputed cache.
For FLRSHA each certificate key signs once and is then erased, so live
requests must arrive in increasing epoch order; repeats and anything
earlier must come from the cache, which :meth:`ComcServer.precompute`
fills in order.
"""

from __future__ import annotations

import logging
import os
import socketserver
import struct
import threading
from pathlib import Path

from . import wire
from ._io import atomic_write
from .cert import merkle_depth
from .errors import (
    BudgetExceeded,
    CorruptKeyFile,
    EpochExpired,
    EpochOutOfRange,
    LrshaError,
    MalformedSecret,
    NotProvisioned,
    ProtocolError,
    RangeTooLarge,
)
from .flrsha import FlrshaServerSecret, flrsha_server_commit
from .group import FLRSHA, LRSHA, SCHEMES, scheme_code
from .keystore import SealedKeystore
from .lrsha import LrshaServerSecret, lrsha_server_commit

log = logging.getLogger(__name__)

DEFAULT_MAX_BATCH = 4096
DEFAULT_CACHE_BUDGET = 64 * 1024 * 1024
_CACHE_MAGIC = b"LRCC"
_CACHE_HEAD = struct.Struct("<4sBBHQ")


def bundle_size(scheme: str, J: int) -> int:
    head = 2 + 8
    cert = 1 + 8 + 32 + 32 + 2
    if scheme == LRSHA:
        return head + 32 + cert
    return head + 64 + cert + 32 + 32 * merkle_depth(J)


def load_secret(scheme: str, blob: bytes):
    if scheme == LRSHA:
        return LrshaServerSecret.from_bytes(blob)
    return FlrshaServerSecret.from_bytes(blob)


class CommitmentCache:
    """Epoch -> encoded bundle, bounded by a byte budget."""

    def __init__(self, budget: int = DEFAULT_CACHE_BUDGET):
        self.budget = budget
        self._bundles: dict[int, bytes] = {}
        self.nbytes = 0
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._bundles)

    def __contains__(self, j: int) -> bool:
        return j in self._bundles

    def get(self, j: int) -> bytes | None:
        b = self._bundles.get(j)
        with self._lock:
            if b is None:
                self.misses += 1
            else:
                self.hits += 1
        return b

    def put(self, j: int, data: bytes) -> bool:
        with self._lock:
            if j in self._bundles:
                return True
            if self.nbytes + len(data) > self.budget:
                return False
            self._bundles[j] = data
            self.nbytes += len(data)
            return True

    def stats(self) -> dict:
        epochs = self._bundles.keys()
        return {
            "count": len(self._bundles),
            "bytes": self.nbytes,
            "budget": self.budget,
            "hits": self.hits,
            "misses": self.misses,
            "lo": min(epochs) if epochs else None,
            "hi": max(epochs) if epochs else None,
        }

    def to_bytes(self, scheme: str, server: int) -> bytes:
        with self._lock:
            items = sorted(self._bundles.items())
        parts = [_CACHE_HEAD.pack(_CACHE_MAGIC, 1, scheme_code(scheme), server, len(items))]
        for j, b in items:
            parts.append(struct.pack("<QI", j, len(b)) + b)
        return b"".join(parts)

    def load_bytes(self, data: bytes, scheme: str, server: int) -> None:
        if len(data) < _CACHE_HEAD.size:
            raise CorruptKeyFile("cache file truncated")
        magic, version, code, index, count = _CACHE_HEAD.unpack_from(data, 0)
        if magic != _CACHE_MAGIC or version != 1 or code != scheme_code(scheme) or index != server:
            raise CorruptKeyFile("cache file belongs to another server or version")
        off = _CACHE_HEAD.size
        for _ in range(count):
            j, n = struct.unpack_from("<QI", data, off)
            off += 12
            self.put(j, bytes(data[off:off + n]))
            off += n


class ComcServer:
    def __init__(self, scheme: str, index: int, keystore: SealedKeystore, *,
                 max_batch: int = DEFAULT_MAX_BATCH, cache_budget: int = DEFAULT_CACHE_BUDGET,
                 table_stride: int | None = None, cache_path: str | os.PathLike | None = None):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        self.scheme = scheme
        self.index = index
        self.keystore = keystore
        self.max_batch = max_batch
        self.table_stride = table_stride
        self.cache = CommitmentCache(cache_budget)
        self.cache_path = Path(cache_path) if cache_path else None
        self._secret = None
        self._fs_lock = threading.Lock()
        if keystore.provisioned:
            self._load()
            if self.cache_path is not None and self.cache_path.exists():
                self.cache.load_bytes(self.cache_path.read_bytes(), scheme, index)

    # -- provisioning ---------------------------------------------------
    def provision(self, blob: bytes) -> None:
        secret = load_secret(self.scheme, blob)
        if secret.index != self.index:
            raise MalformedSecret(f"secret is for server {secret.index}, not {self.index}")
        self.keystore.provision(blob)
        self._load()
        log.info("server %d provisioned (%s)", self.index, self.scheme)

    def _load(self) -> None:
        secret = load_secret(self.scheme, self.keystore.unseal())
        if secret.index != self.index:
            raise MalformedSecret(f"keystore holds server {secret.index}, not {self.index}")
        if isinstance(secret, FlrshaServerSecret):
            secret.build_tables(self.table_stride)
        self._secret = secret

    @property
    def ready(self) -> bool:
        return self._secret is not None

    @property
    def params(self):
        self._require()
        return self._secret.params

    def _require(self):
        if self._secret is None:
            raise NotProvisioned(f"server {self.index} has no secret")
        return self._secret

    def status(self) -> dict:
        out = {"ready": self.ready, "scheme": self.scheme, "server": self.index,
               "keystore": self.keystore.backend}
        if self.ready:
            p = self._secret.params
            out.update({"J": p.J, "L": p.L, "backend": p.group.name})
            if isinstance(self._secret, FlrshaServerSecret):
                out["cert_epoch"] = self._secret.fs.epoch
        out["cache"] = self.cache.stats()
        return out

    # -- serving --------------------------------------------------------
    def _check_epoch(self, j: int) -> None:
        J = self._require().params.J
        if not isinstance(j, int) or not 1 <= j <= J:
            raise EpochOutOfRange(f"epoch {j} outside [1, {J}]")

    def _derive(self, j: int) -> bytes:
        secret = self._secret
        if isinstance(secret, LrshaServerSecret):
            return lrsha_server_commit(secret, j).encode()
        with self._fs_lock:
            if j < secret.fs.epoch:
                raise EpochExpired(f"epoch {j} already passed (certificate key at {secret.fs.epoch})")
            data = flrsha_server_commit(secret, j).encode()
            self.keystore.reseal(secret.to_bytes())
            return data

    def serve_commitment(self, j: int) -> bytes:
        self._require()
        self._check_epoch(j)
        cached = self.cache.get(j)
        if cached is not None:
            return cached
        data = self._derive(j)
        self.cache.put(j, data)
        return data

    def serve_batch(self, lo: int, hi: int) -> list[bytes]:
        self._require()
        if not (isinstance(lo, int) and isinstance(hi, int)) or lo > hi:
            raise EpochOutOfRange(f"bad range [{lo}, {hi}]")
        self._check_epoch(lo)
        self._check_epoch(hi)
        if hi - lo + 1 > self.max_batch:
            raise RangeTooLarge(f"{hi - lo + 1} epochs requested, max batch is {self.max_batch}")
        return [self.serve_commitment(j) for j in range(lo, hi + 1)]

    def precompute(self, lo: int, hi: int, budget: int | None = None) -> dict:
        """Fill the cache for ``[lo, hi]`` (in order) within ``budget`` bytes."""
        secret = self._require()
        self._check_epoch(lo)
        self._check_epoch(hi)
        if lo > hi:
            raise EpochOutOfRange(f"bad range [{lo}, {hi}]")
        if budget is not None:
            self.cache.budget = budget
        need = bundle_size(self.scheme, secret.params.J)
        missing = sum(1 for j in range(lo, hi + 1) if j not in self.cache)
        if self.cache.nbytes + missing * need > self.cache.budget:
            raise BudgetExceeded(
                f"{missing} bundles of {need} bytes exceed the {self.cache.budget}-byte budget")
        for j in range(lo, hi + 1):
            if j not in self.cache:
                self.cache.put(j, self._derive(j))
        self.persist_cache()
        log.info("server %d precomputed epochs %d..%d", self.index, lo, hi)
        return self.cache.stats()

    def persist_cache(self) -> None:
        if self.cache_path is not None:
            atomic_write(self.cache_path, self.cache.to_bytes(self.scheme, self.index), mode=0o644)

    # -- wire -----------------------------------------------------------
    def handle(self, req: dict) -> dict:
        """Answer one decoded request; failures become error responses."""
        try:
            if req.get("v") != wire.VERSION:
                raise ProtocolError("unsupported version")
            if req.get("scheme") != self.scheme:
                raise ProtocolError(f"this server speaks {self.scheme}")
            if req.get("server") != self.index:
                raise ProtocolError(f"this is server {self.index}")
            op = req.get("op")
            if op == "status":
                return {"v": wire.VERSION, "status": self.status()}
            if op == "get":
                return wire.bundles_response([self.serve_commitment(req.get("j"))])
            if op == "batch":
                return wire.bundles_response(self.serve_batch(req.get("lo"), req.get("hi")))
            raise ProtocolError(f"unknown op {op!r}")
        except LrshaError as exc:
            log.info("server %d rejected %s request: %s", self.index, req.get("op"), exc.reason)
            return wire.error_response(exc.reason, str(exc))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        comc: ComcServer = self.server.comc  # type: ignore[attr-defined]
        while True:
            try:
                req = wire.read_frame(self.request)
            except ProtocolError as exc:
                wire.write_frame(self.request, wire.error_response(exc.reason, str(exc)))
                return
            except (ConnectionError, OSError):
                return
            if req is None:
                return
            wire.write_frame(self.request, comc.handle(req))


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve_tcp(comc: ComcServer, host: str = "127.0.0.1", port: int = 0) -> socketserver.TCPServer:
    """Bind and return a threaded server; the caller runs ``serve_forever``."""
    srv = _TCPServer((host, port), _Handler)
    srv.comc = comc  # type: ignore[attr-defined]
    return srv


def start_background(comc: ComcServer, host: str = "127.0.0.1", port: int = 0):
    """Start ``serve_tcp`` on a daemon thread; returns ``(server, (host, port))``."""
    srv = serve_tcp(comc, host, port)
    t = threading.Thread(target=srv.serve_forever, name=f"comc-{comc.index}", daemon=True)
    t.start()
    return srv, srv.server_address[:2]
