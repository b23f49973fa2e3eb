"""Stateless echo server: its long-lived context is written once at start-up."""

from __future__ import annotations

from ..inputs import FuzzInput
from .base import Target, TargetSpec


class Echo(Target):
    def start(self) -> None:
        self.ctx_addr, self.ctx = self.malloc(128)
        self.ctx[:24] = b"echo/1.0 mode=reflect\x00\x00\x00"
        self.hit("echo.start")

    def handle(self, data: bytes) -> None:
        self.io("recv")
        if not data:
            self.hit("echo.empty")
        elif data[:1].isdigit():
            self.hit("echo.digit")
        elif data[:1].isalpha():
            self.hit("echo.alpha")
            if data.isupper():
                self.hit("echo.upper")
        else:
            self.hit("echo.other")
        if len(data) > 64:
            self.hit("echo.long")
        self.send(data)


def target_echo() -> TargetSpec:
    return TargetSpec(
        name="echo",
        factory=Echo,
        seeds=[FuzzInput([b"hello\n", b"world\n", b"again\n"]), FuzzInput([b"ping\n"])],
    )
