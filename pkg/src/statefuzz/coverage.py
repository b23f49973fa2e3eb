"""Edge coverage with AFL-style hit-count buckets and a virgin map."""

from __future__ import annotations

import hashlib
import zlib
from functools import lru_cache

MAP_SIZE = 1 << 16


def bucket(count: int) -> int:
    if count <= 0:
        return 0
    if count <= 2:
        return count
    if count == 3:
        return 4
    if count <= 7:
        return 8
    if count <= 15:
        return 16
    if count <= 31:
        return 32
    if count <= 127:
        return 64
    return 128


@lru_cache(maxsize=None)
def location_id(label: str) -> int:
    return zlib.crc32(label.encode()) & (MAP_SIZE - 1)


class CoverageMap:
    """Hit counts of one execution, stored sparsely (edge id -> count)."""

    def __init__(self):
        self.hits: dict[int, int] = {}
        self._prev = 0

    def hit(self, label: str) -> None:
        cur = location_id(label)
        edge = cur ^ self._prev
        self.hits[edge] = self.hits.get(edge, 0) + 1
        self._prev = cur >> 1

    def reset_context(self) -> None:
        self._prev = 0

    def classified(self) -> dict[int, int]:
        return {e: bucket(c) for e, c in self.hits.items()}

    def to_bytes(self) -> bytes:
        out = bytearray(MAP_SIZE)
        for e, b in self.classified().items():
            out[e] = b
        return bytes(out)

    def signature(self) -> str:
        items = sorted(self.classified().items())
        return hashlib.blake2b(repr(items).encode(), digest_size=8).hexdigest()


class VirginMap:
    def __init__(self):
        self.bits = bytearray(b"\xff" * MAP_SIZE)
        self.n_edges = 0

    def has_new_bits(self, cov: CoverageMap, update: bool = True) -> int:
        """0: nothing new, 1: new hit-count bucket on a known edge, 2: new edge."""
        ret = 0
        bits = self.bits
        for e, b in cov.classified().items():
            v = bits[e]
            if v & b:
                ret = max(ret, 2 if v == 0xFF else 1)
                if update:
                    if v == 0xFF:
                        self.n_edges += 1
                    bits[e] = v & ~b & 0xFF
        return ret
