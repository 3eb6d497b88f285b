"""Command-line tools: ceremony, sign, precompute, verify, demo, bench, comc-server."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import random
import secrets
import signal
import socket
import socketserver
import subprocess
import sys
import tempfile
import threading
from pathlib import Path

from . import bench as benchmod
from . import wire
from ._io import atomic_write
from .comc import DEFAULT_CACHE_BUDGET, DEFAULT_MAX_BATCH, ComcServer, serve_tcp
from .errors import (
    CertFailure,
    DecodeError,
    DirNotEmpty,
    LrshaError,
    ServerUnreachable,
)
from .flrsha import flrsha_keygen
from .group import FLRSHA, LRSHA, SCHEMES, SchemeParams, get_group
from .keystore import FileKeystore
from .lrsha import Signature, lrsha_keygen
from .signer import (
    PrecomputeStore,
    load_signer_key,
    precompute,
    save_signer_key,
    scheme_of,
    sign,
)
from .vclient import DeploymentDescriptor, Verifier

log = logging.getLogger("lrsha.cli")

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_INFRA = 2

CRASH_ENV = "LRSHA_CRASH_AT"
SIGNER_FILE = "signer.key"
DESCRIPTOR_FILE = "descriptor.json"


def server_file(index: int) -> str:
    return f"server-{index}.secret"


def seeded_rng(seed: int | None):
    if seed is None:
        return secrets.token_bytes
    return random.Random(seed).randbytes


def _crash_point(name: str) -> None:
    """Test hook: die abruptly when ``LRSHA_CRASH_AT`` names this point."""
    if os.environ.get(CRASH_ENV) == name:
        os._exit(99)


def _emit(args, record: dict, text: str) -> None:
    if getattr(args, "format", "text") == "json":
        print(json.dumps(record, sort_keys=True))
    else:
        print(text)


# -- ceremony ------------------------------------------------------------------

def ceremony(scheme: str, L: int, J: int, out_dir, backend: str = "ristretto255",
             servers: list[str] | None = None, rng=None) -> dict:
    """Generate all keys into an empty directory; returns the written paths."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        raise DirNotEmpty(f"{out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    params = SchemeParams(get_group(backend), J, L, scheme)
    keygen = lrsha_keygen if scheme == LRSHA else flrsha_keygen
    sk, pk, secrets_ = keygen(params, rng)
    servers = servers or [f"127.0.0.1:{7100 + i}" for i in range(1, L + 1)]
    desc = DeploymentDescriptor.from_public_key(pk, servers)

    paths = {"signer": out / SIGNER_FILE, "descriptor": out / DESCRIPTOR_FILE, "servers": []}
    save_signer_key(paths["signer"], sk)
    for s in secrets_:
        p = out / server_file(s.index)
        atomic_write(p, s.to_bytes())
        paths["servers"].append(p)
    atomic_write(paths["descriptor"], desc.to_json(), mode=0o644)
    return paths


def cmd_ceremony(args) -> int:
    servers = args.servers.split(",") if args.servers else None
    paths = ceremony(args.scheme, args.L, args.J, args.out, args.backend, servers, seeded_rng(args.seed))
    _emit(args, {"signer": str(paths["signer"]), "descriptor": str(paths["descriptor"]),
                 "servers": [str(p) for p in paths["servers"]]},
          f"wrote {paths['signer']}, {len(paths['servers'])} server secrets, {paths['descriptor']}")
    return EXIT_OK


# -- signer ----------------------------------------------------------------------

def _read_message(path: str | None) -> bytes:
    if path is None or path == "-":
        return sys.stdin.buffer.read()
    return Path(path).read_bytes()


def sign_file(key_path, M: bytes, store_path=None) -> Signature:
    """Sign and persist the advanced state before the signature leaves."""
    key = load_signer_key(key_path)
    store = None
    if store_path is not None and Path(store_path).exists():
        store = PrecomputeStore.from_bytes(Path(store_path).read_bytes())
        if store.scheme != scheme_of(key) or store.L != key.params.L:
            raise DecodeError("precompute store does not belong to this key")
    sig = sign(key, M, store)
    _crash_point("before-persist")
    if os.environ.get(CRASH_ENV) == "mid-persist":
        # a torn write lands in a temp file, never on the key itself
        tmp = Path(key_path).with_name(Path(key_path).name + ".torn")
        tmp.write_bytes(b"partial")
        os._exit(99)
    save_signer_key(key_path, key)
    _crash_point("after-persist")
    if store is not None:
        atomic_write(store_path, store.to_bytes())
    return sig


def cmd_sign(args) -> int:
    M = _read_message(args.message)
    sig = sign_file(args.key, M, args.store)
    raw = sig.encode()
    if args.out:
        atomic_write(args.out, raw, mode=0o644)
    _emit(args, {"j": sig.j, "signature": raw.hex()}, raw.hex())
    return EXIT_OK


def cmd_precompute(args) -> int:
    key = load_signer_key(args.key)
    store = precompute(key, args.count, args.watermark)
    atomic_write(args.out, store.to_bytes())
    js = sorted(store.entries)
    _emit(args, {"entries": len(js), "bytes": store.nbytes, "entry_size": store.entry_size,
                 "first": js[0] if js else None, "last": js[-1] if js else None},
          f"{len(js)} entries, {store.nbytes} bytes ({store.entry_size} per entry)")
    return EXIT_OK


# -- verifier --------------------------------------------------------------------

def cmd_verify(args) -> int:
    try:
        desc = DeploymentDescriptor.from_json(Path(args.descriptor).read_bytes())
        M = _read_message(args.message)
        raw = Path(args.sig).read_bytes()
        if args.hex:
            raw = bytes.fromhex(raw.decode().strip())
    except (OSError, ValueError, DecodeError) as exc:
        _emit(args, {"result": "error", "reason": "BadInput", "detail": str(exc)},
              f"ERROR reason=BadInput detail={exc}")
        return EXIT_INFRA
    v = Verifier(desc, timeout=args.timeout, strict_increasing=False)
    verdict = v.verify_message(M, raw)
    if verdict:
        _emit(args, {"result": "accept"}, "ACCEPT")
        return EXIT_OK
    server = "" if verdict.server is None else f" server={verdict.server}"
    record = {"result": "reject", "reason": verdict.reason, "server": verdict.server}
    if verdict.reason == "ServerUnreachable":
        record["result"] = "error"
        _emit(args, record, f"ERROR reason={verdict.reason}{server}")
        return EXIT_INFRA
    _emit(args, record, f"REJECT reason={verdict.reason}{server}")
    return EXIT_REJECT


# -- comc-server -------------------------------------------------------------------

def _env(name: str, default=None):
    return os.environ.get("LRSHA_" + name, default)


def _range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError("range must look like lo:hi")
    return int(lo), int(hi)


def comc_server_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="comc-server", description="Run one commitment server.")
    p.add_argument("--scheme", choices=SCHEMES, default=_env("SCHEME"))
    p.add_argument("--index", type=int, default=_env("INDEX"))
    p.add_argument("--listen", default=_env("LISTEN", "127.0.0.1:0"))
    p.add_argument("--keystore", default=_env("KEYSTORE"))
    p.add_argument("--precompute", type=_range, default=_env("PRECOMPUTE"))
    p.add_argument("--max-batch", type=int, default=int(_env("MAX_BATCH", DEFAULT_MAX_BATCH)))
    p.add_argument("--cache-budget", type=int, default=int(_env("CACHE_BUDGET", DEFAULT_CACHE_BUDGET)))
    p.add_argument("--cache", default=_env("CACHE"), help="cache file (default: <keystore>.cache)")
    p.add_argument("--provision", default=_env("PROVISION"), help="secret blob to seal on first start")
    p.add_argument("--log-level", default=_env("LOG_LEVEL", "WARNING"))
    return p


def comc_server_main(argv=None) -> int:
    args = comc_server_parser().parse_args(argv)
    if isinstance(args.precompute, str):
        args.precompute = _range(args.precompute)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if not (args.scheme and args.index and args.keystore):
        print("comc-server: --scheme, --index and --keystore are required", file=sys.stderr)
        return EXIT_INFRA
    try:
        ks = FileKeystore(args.keystore)
        cache = args.cache or args.keystore + ".cache"
        comc = ComcServer(args.scheme, int(args.index), ks, max_batch=args.max_batch,
                          cache_budget=args.cache_budget, cache_path=cache)
        if args.provision:
            comc.provision(Path(args.provision).read_bytes())
        if args.precompute:
            comc.precompute(*args.precompute)
        host, port = wire.parse_address(args.listen)
        srv = serve_tcp(comc, host, port)
    except (LrshaError, OSError, ValueError) as exc:
        print(f"comc-server: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INFRA

    def stop(signum, frame):
        threading.Thread(target=srv.shutdown, daemon=True).start()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    h, p = srv.server_address[:2]
    print(f"LISTENING {h}:{p}", flush=True)
    try:
        srv.serve_forever()
    finally:
        srv.server_close()
        comc.persist_cache()
    return EXIT_OK


# -- demo ------------------------------------------------------------------------

class TamperProxy(socketserver.ThreadingTCPServer):
    """Frame-level proxy in front of one server.

    Every frame is decoded and re-encoded and the two byte strings compared,
    which doubles as a wire round-trip check.  When ``tamper_epoch`` is set,
    one byte of the bundle for that epoch is flipped in flight.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, upstream: tuple[str, int]):
        super().__init__(("127.0.0.1", 0), _ProxyHandler)
        self.upstream = upstream
        self.tamper_epoch: int | None = None
        self.tamper_offset = 0
        self.frames = 0
        self.roundtrip_failures = 0
        self.tampered = 0
        self._lock = threading.Lock()

    def check_roundtrip(self, body: bytes) -> dict:
        obj = wire.decode_body(body)
        with self._lock:
            self.frames += 1
            if wire.canonical_json(obj) != body:
                self.roundtrip_failures += 1
        return obj

    def rewrite(self, resp: dict) -> dict:
        if self.tamper_epoch is None or "bundles" not in resp:
            return resp
        out = []
        for h in resp["bundles"]:
            b = bytearray(bytes.fromhex(h))
            if int.from_bytes(b[2:10], "little") == self.tamper_epoch:
                b[self.tamper_offset % len(b)] ^= 0x01
                with self._lock:
                    self.tampered += 1
            out.append(bytes(b).hex())
        return dict(resp, bundles=out)


class _ProxyHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        proxy: TamperProxy = self.server  # type: ignore[assignment]
        with socket.create_connection(proxy.upstream, timeout=30) as up:
            while True:
                body = wire.read_body(self.request)
                if body is None:
                    return
                wire.write_frame(up, proxy.check_roundtrip(body))
                rbody = wire.read_body(up)
                if rbody is None:
                    return
                wire.write_frame(self.request, proxy.rewrite(proxy.check_roundtrip(rbody)))


class DemoFailure(Exception):
    def __init__(self, stage: str, detail: str, code: int = EXIT_REJECT):
        self.stage = stage
        self.detail = detail
        self.code = code
        super().__init__(f"stage={stage}: {detail}")


def _spawn_server(scheme: str, index: int, workdir: Path, J: int, log_level: str) -> tuple:
    cmd = [sys.executable, "-m", "lrsha", "comc-server", "--scheme", scheme, "--index", str(index),
           "--listen", "127.0.0.1:0", "--keystore", str(workdir / f"keystore-{index}"),
           "--provision", str(workdir / server_file(index)), "--precompute", f"1:{J}",
           "--log-level", log_level]
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    line = proc.stdout.readline().strip()
    if not line.startswith("LISTENING "):
        proc.kill()
        err = proc.stderr.read().strip()
        raise DemoFailure("spawn", f"server {index} did not start: {err or line}", EXIT_INFRA)
    return proc, wire.parse_address(line.split()[1])


def run_demo(scheme: str, L: int, J: int, backend: str = "ristretto255", seed: int | None = None,
             messages: int = 8, tamper_server: int = 2, out=print, log_level: str = "WARNING") -> int:
    rng = random.Random(seed) if seed is not None else random.Random(secrets.randbits(64))
    tamper_server = min(max(1, tamper_server), L)
    messages = max(1, min(messages, J - 1))
    procs = []
    proxy = None
    try:
        with tempfile.TemporaryDirectory(prefix="lrsha-demo-") as tmp:
            work = Path(tmp)
            keys = work / "keys"
            ceremony(scheme, L, J, keys, backend, rng=rng.randbytes)
            desc = DeploymentDescriptor.from_json((keys / DESCRIPTOR_FILE).read_bytes())
            fp = hashlib.blake2b(b"".join(desc.keys), digest_size=8).hexdigest()
            out(f"ceremony scheme={scheme} backend={backend} L={L} J={J} keys={fp}")

            addrs = []
            for i in range(1, L + 1):
                proc, addr = _spawn_server(scheme, i, keys, J, log_level)
                procs.append(proc)
                addrs.append(addr)
            out(f"servers started count={L}")
            proxy = TamperProxy(addrs[tamper_server - 1])
            threading.Thread(target=proxy.serve_forever, daemon=True).start()
            endpoints = [f"{h}:{p}" for h, p in addrs]
            ph, pp = proxy.server_address[:2]
            endpoints[tamper_server - 1] = f"{ph}:{pp}"
            desc = desc.with_servers(endpoints)
            atomic_write(keys / DESCRIPTOR_FILE, desc.to_json(), mode=0o644)

            key_path = keys / SIGNER_FILE
            signed = []
            for n in range(messages):
                M = f"message {n + 1}".encode()
                sig = sign_file(key_path, M)
                signed.append((M, sig))
                out(f"sign j={sig.j} sig={sig.encode().hex()}")

            verifier = Verifier(desc)
            try:
                verifier.prefetch(1, messages)
            except LrshaError as exc:
                raise DemoFailure("prefetch", str(exc)) from None
            for M, sig in signed:
                v = verifier.verify_message(M, sig.encode())
                out(f"verify j={sig.j} {'ACCEPT' if v else 'REJECT ' + str(v.reason)}")
                if not v:
                    raise DemoFailure("verify", f"honest signature at j={sig.j} rejected ({v.reason})")
                forged = bytearray(sig.encode())
                forged[0] ^= 0x01
                if verifier.verify_message(M, bytes(forged)):
                    raise DemoFailure("verify", f"forged signature at j={sig.j} accepted")
            out(f"honest phase ok verified={len(signed)}")

            # tamper phase: the proxy corrupts one epoch of one server in flight
            t = messages + 1
            proxy.tamper_epoch = t
            proxy.tamper_offset = rng.randrange(1 << 16)
            M = b"message under tamper"
            sig = sign_file(key_path, M)
            out(f"tamper server={tamper_server} epoch={t} offset={proxy.tamper_offset}")
            fresh = Verifier(desc)
            v = fresh.verify_message(M, sig.encode())
            if v or v.reason != "CertFailure" or v.server != tamper_server:
                raise DemoFailure("tamper", f"expected CertFailure{{{tamper_server}}}, got {v!r}")
            out(f"detect CertFailure{{{v.server}}} on verify")
            try:
                fresh.prefetch(1, J)
                raise DemoFailure("tamper", "prefetch over tampered range succeeded")
            except CertFailure as exc:
                bad = getattr(exc, "failures", [exc])
                if [(f.server, f.epoch) for f in bad] != [(tamper_server, t)]:
                    raise DemoFailure("tamper", f"misattributed failures {[(f.server, f.epoch) for f in bad]}")
                out(f"detect CertFailure{{{exc.server},{exc.epoch}}} on prefetch cached={len(fresh.cache)}")
            except ServerUnreachable as exc:
                raise DemoFailure("tamper", str(exc), EXIT_INFRA) from None
            report = fresh.audit_servers([1, t, J])
            for s, e in report.servers.items():
                out(f"audit server={s} {'pass' if e.passed else 'FAIL first=' + str(e.first_failure)}")
            if report.flagged != [tamper_server]:
                raise DemoFailure("audit", f"flagged {report.flagged}")

            proxy.tamper_epoch = None
            if proxy.roundtrip_failures or not proxy.frames:
                raise DemoFailure("wire", f"{proxy.roundtrip_failures} frames did not round-trip")
            out("wire roundtrip ok")
        out("result PASS")
        return EXIT_OK
    except DemoFailure as exc:
        out(f"result FAIL stage={exc.stage} {exc.detail}")
        return exc.code
    finally:
        if proxy is not None:
            proxy.shutdown()
            proxy.server_close()
        for proc in procs:
            proc.terminate()
        for proc in procs:
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
            for stream in (proc.stdout, proc.stderr):
                if stream:
                    stream.close()


def cmd_demo(args) -> int:
    lines: list[str] = []

    def out(line: str) -> None:
        lines.append(line)
        print(line, flush=True)

    code = run_demo(args.scheme, args.L, args.J, args.backend, args.seed, args.messages,
                    args.tamper_server, out)
    if args.transcript:
        Path(args.transcript).write_text("\n".join(lines) + "\n")
    return code


# -- bench -----------------------------------------------------------------------

def cmd_bench(args) -> int:
    report = benchmod.run(tuple(args.schemes.split(",")), args.iterations, args.L,
                          get_group(args.backend))
    md = benchmod.markdown(report)
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.md_out:
        Path(args.md_out).write_text(md)
    if args.format == "json":
        print(json.dumps(report, sort_keys=True))
    else:
        print(md, end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrsha", description="Lightweight signatures with commitment servers.")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt(sp):
        sp.add_argument("--format", choices=("text", "json"), default="text")

    sp = sub.add_parser("ceremony", help="generate signer key, server secrets and descriptor")
    sp.add_argument("--scheme", choices=SCHEMES, default=LRSHA)
    sp.add_argument("--L", type=int, default=3)
    sp.add_argument("--J", type=int, default=2**20)
    sp.add_argument("--backend", default="ristretto255")
    sp.add_argument("--servers", help="comma-separated host:port list, one per server")
    sp.add_argument("--seed", type=int, help="deterministic key generation (testing only)")
    sp.add_argument("--out", required=True)
    fmt(sp)
    sp.set_defaults(func=cmd_ceremony)

    sp = sub.add_parser("sign", help="sign a message and advance the key file")
    sp.add_argument("--key", required=True)
    sp.add_argument("--message", default="-", help="file to sign, '-' for stdin")
    sp.add_argument("--store", help="precompute store to consume")
    sp.add_argument("--out", help="write the 72-byte signature here")
    fmt(sp)
    sp.set_defaults(func=cmd_sign)

    sp = sub.add_parser("precompute", help="derive signer material for upcoming epochs")
    sp.add_argument("--key", required=True)
    sp.add_argument("--count", type=int, default=2**11)
    sp.add_argument("--watermark", type=int, default=0)
    sp.add_argument("--out", required=True)
    fmt(sp)
    sp.set_defaults(func=cmd_precompute)

    sp = sub.add_parser("verify", help="verify a signature; exit 0 accept, 1 reject, 2 error")
    sp.add_argument("--descriptor", required=True)
    sp.add_argument("--message", default="-")
    sp.add_argument("--sig", required=True)
    sp.add_argument("--hex", action="store_true", help="signature file holds hex text")
    sp.add_argument("--timeout", type=float, default=10.0)
    fmt(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("demo", help="end-to-end run against local server processes")
    sp.add_argument("--scheme", choices=SCHEMES, default=LRSHA)
    sp.add_argument("--L", type=int, default=3)
    sp.add_argument("--J", type=int, default=32)
    sp.add_argument("--backend", default="ristretto255")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--messages", type=int, default=8)
    sp.add_argument("--tamper-server", type=int, default=2)
    sp.add_argument("--transcript", help="also write the transcript to this file")
    sp.set_defaults(func=cmd_demo)

    sp = sub.add_parser("bench", help="median timings against a baseline Schnorr signer")
    sp.add_argument("--schemes", default=f"{LRSHA},{FLRSHA}")
    sp.add_argument("--iterations", type=int, default=benchmod.MIN_ITERATIONS)
    sp.add_argument("--L", type=int, default=3)
    sp.add_argument("--backend", default="ristretto255")
    sp.add_argument("--json-out")
    sp.add_argument("--md-out")
    fmt(sp)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("comc-server", help="run one commitment server", add_help=False)
    sp.set_defaults(func=None)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "comc-server":
        return comc_server_main(argv[1:])
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LrshaError as exc:
        _emit(args, {"result": "error", "reason": exc.reason, "detail": str(exc)},
              f"ERROR reason={exc.reason} detail={exc}")
        return EXIT_INFRA
    except OSError as exc:
        _emit(args, {"result": "error", "reason": "IOError", "detail": str(exc)},
              f"ERROR reason=IOError detail={exc}")
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
