"""Session inputs and the ``.safl`` on-disk format.

Layout (little-endian)::

    b"SAFL" | version:u8 = 1 | message_count:u32 | (length:u32 | bytes) * count
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

MAGIC = b"SAFL"
VERSION = 1
MAX_INPUT_BYTES = 1 << 20
MAX_MESSAGES = 512


class SaflFormatError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} at offset {offset}")
        self.offset = offset


@dataclass
class Provenance:
    parent_id: int | None = None
    state_targeted: int | None = None
    operators_applied: list[str] = field(default_factory=list)


@dataclass
class FuzzInput:
    messages: list[bytes]
    provenance: Provenance = field(default_factory=Provenance, compare=False)

    def __post_init__(self):
        self.messages = [bytes(m) for m in self.messages]

    @property
    def size(self) -> int:
        return sum(len(m) for m in self.messages)

    def valid(self) -> bool:
        return 1 <= len(self.messages) <= MAX_MESSAGES and self.size <= MAX_INPUT_BYTES

    def copy(self) -> "FuzzInput":
        return FuzzInput(list(self.messages), Provenance(self.provenance.parent_id,
                                                         self.provenance.state_targeted,
                                                         list(self.provenance.operators_applied)))

    def to_bytes(self) -> bytes:
        return encode(self.messages)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FuzzInput":
        return cls(decode(data))


def encode(messages: Iterable[bytes]) -> bytes:
    messages = list(messages)
    out = bytearray(MAGIC)
    out += struct.pack("<BI", VERSION, len(messages))
    for m in messages:
        out += struct.pack("<I", len(m))
        out += m
    return bytes(out)


def decode(data: bytes) -> list[bytes]:
    if len(data) < 4 or data[:4] != MAGIC:
        raise SaflFormatError("bad magic", 0)
    if len(data) < 9:
        raise SaflFormatError("truncated header", len(data))
    version, count = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise SaflFormatError(f"unsupported version {version}", 4)
    pos = 9
    messages = []
    for i in range(count):
        if pos + 4 > len(data):
            raise SaflFormatError(f"truncated length of message {i}", pos)
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise SaflFormatError(f"truncated body of message {i} ({n} bytes)", pos)
        messages.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise SaflFormatError("trailing bytes", pos)
    return messages


def read_input(path: str | Path) -> FuzzInput:
    return FuzzInput.from_bytes(Path(path).read_bytes())


def write_input(path: str | Path, inp: FuzzInput | Iterable[bytes]) -> Path:
    path = Path(path)
    msgs = inp.messages if isinstance(inp, FuzzInput) else list(inp)
    path.write_bytes(encode(msgs))
    return path


def load_seed_dir(path: str | Path) -> list[FuzzInput]:
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"seed directory {path} does not exist")
    return [read_input(p) for p in sorted(path.glob("*.safl"))]
