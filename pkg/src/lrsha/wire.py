"""Length-prefixed canonical-JSON framing used between verifiers and servers.

Each frame is a 4-byte big-endian length followed by that many bytes of
canonical JSON (sorted keys, no whitespace).  Bundles ride inside as
lowercase hex of their binary layouts.
"""

from __future__ import annotations

import json
import socket
import struct
from typing import Any

from .errors import ProtocolError

VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
_LEN = struct.Struct(">I")


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def encode_frame(obj: dict) -> bytes:
    body = canonical_json(obj)
    if len(body) > MAX_FRAME:
        raise ProtocolError("frame too large")
    return _LEN.pack(len(body)) + body


def decode_body(body: bytes) -> dict:
    try:
        obj = json.loads(body)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON: {exc}") from None
    if not isinstance(obj, dict) or obj.get("v") != VERSION:
        raise ProtocolError("unsupported message version")
    return obj


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_body(sock: socket.socket) -> bytes | None:
    """Next frame body as raw bytes, or None on a clean EOF between frames."""
    first = sock.recv(_LEN.size)
    if not first:
        return None
    head = first + (_recv_exact(sock, _LEN.size - len(first)) if len(first) < _LEN.size else b"")
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError("frame too large")
    return _recv_exact(sock, n)


def read_frame(sock: socket.socket) -> dict | None:
    body = read_body(sock)
    return None if body is None else decode_body(body)


def write_frame(sock: socket.socket, obj: dict) -> None:
    sock.sendall(encode_frame(obj))


# -- message constructors --------------------------------------------------

def get_request(scheme: str, server: int, j: int) -> dict:
    return {"v": VERSION, "scheme": scheme, "server": server, "op": "get", "j": j}


def batch_request(scheme: str, server: int, lo: int, hi: int) -> dict:
    return {"v": VERSION, "scheme": scheme, "server": server, "op": "batch", "lo": lo, "hi": hi}


def status_request(scheme: str, server: int) -> dict:
    return {"v": VERSION, "scheme": scheme, "server": server, "op": "status"}


def bundles_response(bundles: list[bytes]) -> dict:
    return {"v": VERSION, "bundles": [b.hex() for b in bundles]}


def error_response(reason: str, detail: str = "") -> dict:
    return {"v": VERSION, "error": reason, "detail": detail}


def parse_bundles(resp: dict) -> list[bytes]:
    if "error" in resp:
        raise ProtocolError(f"{resp['error']}: {resp.get('detail', '')}")
    raw = resp.get("bundles")
    if not isinstance(raw, list):
        raise ProtocolError("response carries no bundle list")
    try:
        return [bytes.fromhex(h) for h in raw]
    except (TypeError, ValueError):
        raise ProtocolError("bundle is not hex") from None


def call(address: tuple[str, int], request: dict, timeout: float = 10.0) -> dict:
    """One request/response exchange on a fresh connection."""
    with socket.create_connection(address, timeout=timeout) as sock:
        write_frame(sock, request)
        resp = read_frame(sock)
    if resp is None:
        raise ConnectionError("server closed the connection without answering")
    return resp


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host, int(port)
