"""Exception hierarchy shared by every layer of the package."""

from __future__ import annotations


class LrshaError(Exception):
    """Base class for all package errors."""

    reason = "Error"


class DecodeError(LrshaError, ValueError):
    reason = "DecodeError"


class EmptyList(LrshaError, ValueError):
    reason = "EmptyList"


class InvalidStride(LrshaError, ValueError):
    reason = "InvalidStride"


class EpochOutOfRange(LrshaError, ValueError):
    reason = "EpochOutOfRange"


class EpochExpired(LrshaError):
    reason = "EpochExpired"


class StateExhausted(LrshaError):
    reason = "StateExhausted"


class EpochMismatch(LrshaError):
    reason = "EpochMismatch"


class MissingServer(LrshaError):
    reason = "MissingServer"

    def __init__(self, server: int, message: str = ""):
        self.server = server
        super().__init__(message or f"no bundle from server {server}")


class CertFailure(LrshaError):
    """A server answered with material that does not authenticate."""

    reason = "CertFailure"

    def __init__(self, server: int, epoch: int | None = None, detail: str = ""):
        self.server = server
        self.epoch = epoch
        self.detail = detail
        where = f"server {server}" + (f" epoch {epoch}" if epoch is not None else "")
        super().__init__(f"certificate failure from {where}" + (f": {detail}" if detail else ""))


class ServerUnreachable(LrshaError):
    reason = "ServerUnreachable"

    def __init__(self, server: int, detail: str = ""):
        self.server = server
        self.detail = detail
        super().__init__(f"server {server} unreachable" + (f": {detail}" if detail else ""))


class AlreadyProvisioned(LrshaError):
    reason = "AlreadyProvisioned"


class NotProvisioned(LrshaError):
    reason = "NotProvisioned"


class MalformedSecret(LrshaError, ValueError):
    reason = "MalformedSecret"


class RangeTooLarge(LrshaError, ValueError):
    reason = "RangeTooLarge"


class BudgetExceeded(LrshaError):
    reason = "BudgetExceeded"


class DirNotEmpty(LrshaError):
    reason = "DirNotEmpty"


class CorruptKeyFile(LrshaError):
    reason = "CorruptKeyFile"


class CountExceedsRemaining(LrshaError, ValueError):
    reason = "CountExceedsRemaining"


class ProtocolError(LrshaError):
    reason = "ProtocolError"


class Verdict:
    """Boolean verification outcome that remembers why it failed."""

    __slots__ = ("ok", "reason", "server")

    def __init__(self, ok: bool, reason: str | None = None, server: int | None = None):
        self.ok = ok
        self.reason = reason
        self.server = server

    def __bool__(self) -> bool:
        return self.ok

    def __eq__(self, other: object) -> bool:
        if isinstance(other, bool):
            return self.ok is other
        if isinstance(other, Verdict):
            return (self.ok, self.reason, self.server) == (other.ok, other.reason, other.server)
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.ok, self.reason, self.server))

    def __repr__(self) -> str:
        if self.ok:
            return "Verdict(accept)"
        extra = f", server={self.server}" if self.server is not None else ""
        return f"Verdict(reject, reason={self.reason!r}{extra})"


ACCEPT = Verdict(True)


def reject(reason: str, server: int | None = None) -> Verdict:
    return Verdict(False, reason, server)
