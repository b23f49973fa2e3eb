"""Binary TLV server with a three-step handshake and no status codes.

Frame: ``type:u8 | length:u16 LE | value``.  HELLO(1) -> KEYX(2) -> FINISH(3)
establishes a session; DATA(4) is echoed afterwards.  Anything out of
order, or a frame whose length field disagrees with its size, resets the
session to its start-up state.
"""

from __future__ import annotations

import struct

from ..inputs import FuzzInput
from .base import Target, TargetSpec

HELLO, KEYX, FINISH, DATA = 1, 2, 3, 4
ALERT = 0xF0
PHASE, NONCE, KEY, ESTABLISHED = 0, 8, 16, 24
CTX_SIZE = 64


def frame(kind: int, value: bytes = b"") -> bytes:
    return struct.pack("<BH", kind, len(value)) + value


class BinProto(Target):
    def start(self) -> None:
        self.ctx_addr, self.ctx = self.malloc(CTX_SIZE)
        self.hit("bp.start")

    def _reset(self) -> None:
        self.ctx[:] = bytes(CTX_SIZE)

    def handle(self, data: bytes) -> None:
        self.io("recv")
        if len(data) < 3 or struct.unpack_from("<H", data, 1)[0] != len(data) - 3:
            self.hit("bp.badframe")
            self._reset()
            self.send(frame(ALERT, b"\x01"))
            return
        kind, value = data[0], data[3:]
        phase = self.ctx[PHASE]
        if kind == HELLO and phase == 0:
            self.hit("bp.hello")
            self.ctx[PHASE] = 1
            self.ctx[NONCE:NONCE + 8] = value[:8].ljust(8, b"\x00")
            self.send(frame(0x81, b"srv-hello"))
        elif kind == KEYX and phase == 1:
            self.hit("bp.keyx")
            if len(value) >= 8:
                self.hit("bp.keyx.full")
            self.ctx[PHASE] = 2
            self.ctx[KEY:KEY + 8] = value[:8].ljust(8, b"\x00")
            self.send(frame(0x82))
        elif kind == FINISH and phase == 2:
            self.hit("bp.finish")
            self.ctx[PHASE] = 3
            self.ctx[ESTABLISHED] = 1
            self.send(frame(0x83))
        elif kind == DATA and phase == 3:
            self.hit("bp.data")
            self.send(frame(0x84, value))
        else:
            self.hit("bp.order")
            self._reset()
            self.send(frame(ALERT, b"\x02"))


def target_binproto() -> TargetSpec:
    return TargetSpec(
        name="binproto",
        factory=BinProto,
        seeds=[FuzzInput([frame(HELLO, b"client01"), frame(KEYX, b"k3y-0001"), frame(FINISH),
                          frame(DATA, b"payload")])],
    )
