"""Transports that drive one session against a fresh target instance.

Both channels deliver the same message sequence and return the same
:class:`SessionResult`.  The TCP loopback channel frames every message with
a u32 little-endian length; after the replies to one request the server
writes a terminator frame whose length field is ``0xFFFFFFFF``.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
import traceback
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..coverage import CoverageMap
from ..runtime import RuntimeState
from .base import TargetCrash, TargetSpec

log = logging.getLogger(__name__)

END_OF_REPLIES = 0xFFFFFFFF


@dataclass
class SessionResult:
    banner: list[bytes] = field(default_factory=list)
    replies: list[Optional[list[bytes]]] = field(default_factory=list)
    crash: Optional[TargetCrash] = None
    hang: bool = False
    channel_error: Optional[str] = None
    reply_timeouts: int = 0
    elapsed: float = 0.0


def _trap(exc: BaseException) -> TargetCrash:
    frames = traceback.extract_tb(exc.__traceback__)
    where = f"{frames[-1].name}:{frames[-1].lineno}" if frames else "?"
    return TargetCrash(0, f"trap:{type(exc).__name__}@{where}")


class InProcessChannel:
    """Runs the target inline.

    A request that produces no reply counts as a reply timeout right away:
    the call has returned, so nothing can arrive later.
    """

    kind = "in-process"

    def run(self, spec: TargetSpec, messages: Sequence[bytes], rt: RuntimeState, cov: CoverageMap,
            reply_timeout: float = 0.05, hang_timeout: float = 1.0) -> SessionResult:
        res = SessionResult()
        t0 = time.perf_counter()
        target = spec.instantiate(rt, cov)
        try:
            res.banner = target.boot()
            for i, msg in enumerate(messages):
                if target.closed:
                    break
                rt.current_message = i
                out = target.deliver(msg)
                if out:
                    res.replies.append(out)
                else:
                    res.replies.append(None)
                    res.reply_timeouts += 1
                if time.perf_counter() - t0 > hang_timeout:
                    res.hang = True
                    break
        except TargetCrash as c:
            res.crash = c
        except Exception as e:  # any other fault in the target is a trap
            res.crash = _trap(e)
        res.elapsed = time.perf_counter() - t0
        return res

    def close(self) -> None:
        pass


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Optional[tuple[int, bytes]]:
    """Returns ``(length_field, payload)``; None on EOF."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (n,) = struct.unpack("<I", head)
    if n == END_OF_REPLIES:
        return n, b""
    body = _recv_exact(sock, n)
    if body is None:
        return None
    return n, body


def write_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def _write_batch(sock: socket.socket, replies: Sequence[bytes]) -> None:
    out = bytearray()
    for r in replies:
        out += struct.pack("<I", len(r)) + r
    out += struct.pack("<I", END_OF_REPLIES)
    sock.sendall(bytes(out))


def _read_batch(sock: socket.socket) -> Optional[list[bytes]]:
    """Replies up to the terminator; None on EOF."""
    out = []
    while True:
        fr = read_frame(sock)
        if fr is None:
            return None
        if fr[0] == END_OF_REPLIES:
            return out
        out.append(fr[1])


class _ServerSession:
    def __init__(self, spec, rt, cov):
        self.spec, self.rt, self.cov = spec, rt, cov
        self.crash: Optional[TargetCrash] = None
        self.error: Optional[str] = None


class TcpLoopbackChannel:
    """Serves each session from a background thread over 127.0.0.1.

    Hooks run on the server thread; the caller reads the runtime only after
    the thread has been joined.
    """

    kind = "tcp"

    def __init__(self):
        self.listener = socket.create_server(("127.0.0.1", 0))
        self.address = self.listener.getsockname()

    def _serve(self, sess: _ServerSession) -> None:
        try:
            conn, _ = self.listener.accept()
        except OSError as e:
            sess.error = str(e)
            return
        with conn:
            target = sess.spec.instantiate(sess.rt, sess.cov)
            try:
                _write_batch(conn, target.boot())
                i = 0
                while not target.closed:
                    fr = read_frame(conn)
                    if fr is None:
                        break
                    sess.rt.current_message = i
                    i += 1
                    _write_batch(conn, target.deliver(fr[1]))
            except TargetCrash as c:
                sess.crash = c
            except (ConnectionError, BrokenPipeError) as e:
                sess.error = str(e)
            except Exception as e:
                sess.crash = _trap(e)

    def run(self, spec: TargetSpec, messages: Sequence[bytes], rt: RuntimeState, cov: CoverageMap,
            reply_timeout: float = 0.05, hang_timeout: float = 1.0) -> SessionResult:
        res = SessionResult()
        t0 = time.perf_counter()
        sess = _ServerSession(spec, rt, cov)
        th = threading.Thread(target=self._serve, args=(sess,), daemon=True)
        th.start()
        try:
            with socket.create_connection(self.address, timeout=hang_timeout) as sock:
                sock.settimeout(hang_timeout)
                banner = _read_batch(sock)
                res.banner = banner or []
                if banner is not None:
                    sock.settimeout(reply_timeout)
                    for msg in messages:
                        try:
                            write_frame(sock, msg)
                            batch = _read_batch(sock)
                        except socket.timeout:
                            res.replies.append(None)
                            res.reply_timeouts += 1
                            continue
                        except (BrokenPipeError, ConnectionResetError):
                            break
                        if batch is None:
                            break
                        if batch:
                            res.replies.append(batch)
                        else:
                            res.replies.append(None)
                            res.reply_timeouts += 1
                        if time.perf_counter() - t0 > hang_timeout:
                            res.hang = True
                            break
        except OSError as e:
            res.channel_error = str(e)
            log.warning("tcp channel failure: %s", e)
        th.join(hang_timeout)
        if th.is_alive():
            res.hang = True
        res.crash = sess.crash
        if sess.error and not res.channel_error:
            res.channel_error = sess.error
        res.elapsed = time.perf_counter() - t0
        return res

    def close(self) -> None:
        self.listener.close()


def make_channel(kind: str):
    if kind in ("in-process", "inprocess", "inproc"):
        return InProcessChannel()
    if kind in ("tcp", "tcp-loopback"):
        return TcpLoopbackChannel()
    raise ValueError(f"unknown channel kind {kind!r}")
