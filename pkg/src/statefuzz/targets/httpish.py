"""HTTP-like server whose request and reply paths go through library routines.

``http_read`` wraps the socket ``recv`` and ``http_reply`` wraps two raw
``send`` calls (headers, body).  Before processing, the server emits an
interim ``100 Continue`` through a bare ``send``; with the default hooks
that interim send closes the iteration before the session state is
updated, so the inferred states lag one request behind.  Hooking
``http_read``/``http_reply`` instead aligns iterations with real replies.
"""

from __future__ import annotations

from ..inputs import FuzzInput
from .base import Target, TargetSpec


class HttpIsh(Target):
    io_routines = ("recv", "send", "http_read", "http_reply")

    def start(self) -> None:
        self.ctx_addr, self.ctx = self.malloc(96)
        self.hit("http.start")

    def http_reply(self, status: bytes, body: bytes) -> None:
        self.io("http_reply")
        self.send(b"HTTP/1.1 " + status + b"\r\n\r\n")
        self.send(body)

    def handle(self, data: bytes) -> None:
        self.io("http_read")
        self.io("recv")
        self.send(b"HTTP/1.1 100 Continue\r\n\r\n")
        line = data.split(b"\r\n", 1)[0]
        parts = line.split(b" ")
        if len(parts) < 2:
            self.hit("http.bad")
            self.http_reply(b"400 Bad Request", b"")
            return
        method, path = parts[0], parts[1]
        if method == b"POST" and path == b"/login":
            self.hit("http.login")
            self.ctx[0] = 1
            self.http_reply(b"200 OK", b"welcome")
        elif method == b"POST" and path == b"/logout":
            self.hit("http.logout")
            self.ctx[0] = 0
            self.http_reply(b"200 OK", b"bye")
        elif method == b"GET":
            self.hit("http.get")
            self.http_reply(b"200 OK", b"page" if self.ctx[0] else b"login first")
        else:
            self.hit("http.other")
            self.http_reply(b"405 Method Not Allowed", b"")


def target_httpish() -> TargetSpec:
    return TargetSpec(
        name="httpish",
        factory=HttpIsh,
        seeds=[FuzzInput([b"GET / HTTP/1.1\r\n", b"POST /login HTTP/1.1\r\n", b"GET /x HTTP/1.1\r\n",
                          b"POST /logout HTTP/1.1\r\n"])],
    )
