"""Insert-only state registry backed by a multi-vantage-point tree.

Each stored digest owns a dense state id (1, 2, 3, ... in insertion order).
Internal nodes hold two vantage entries; children are the 2x2 partitions by
median distance to each vantage point.  Pruning uses
:func:`statefuzz.tlsh.metric_floor`, a genuine metric bounded above by the
TLSH distance, so a radius query can never miss an entry that a linear scan
would return.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import tlsh
from .tlsh import TlshDigest

log = logging.getLogger(__name__)

LEAF_CAP = 16
DUMMY_STATE = 0


@dataclass
class Entry:
    digest: TlshDigest
    state_id: int


@dataclass
class _Child:
    node: "MvpNode"
    # Observed metric ranges to the parent's vantage points.
    lo1: int
    hi1: int
    lo2: int
    hi2: int

    def widen(self, d1: int, d2: int) -> None:
        self.lo1, self.hi1 = min(self.lo1, d1), max(self.hi1, d1)
        self.lo2, self.hi2 = min(self.lo2, d2), max(self.hi2, d2)


@dataclass
class MvpNode:
    entries: list[Entry] = field(default_factory=list)
    vp1: Optional[Entry] = None
    vp2: Optional[Entry] = None
    split1: int = 0
    split2: tuple[int, int] = (0, 0)
    children: list[Optional[_Child]] = field(default_factory=lambda: [None] * 4)

    @property
    def is_leaf(self) -> bool:
        return self.vp1 is None


def _median(values: list[int]) -> int:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


class StateRegistry:
    def __init__(self, floor: Callable[[TlshDigest, TlshDigest], int] = tlsh.metric_floor,
                 distance_fn: Callable[[TlshDigest, TlshDigest], int] = tlsh.distance):
        self.root = MvpNode()
        self.count = 0
        self.floor = floor
        self.distance_fn = distance_fn
        self._entries: list[Entry] = []

    def __len__(self) -> int:
        return self.count

    def digests(self) -> list[TlshDigest]:
        return [e.digest for e in self._entries]

    # -- insertion ---------------------------------------------------------

    def insert(self, h: TlshDigest) -> int:
        entry = Entry(h, self.count + 1)
        self.count += 1
        self._entries.append(entry)
        self._place(self.root, entry)
        return entry.state_id

    def _place(self, node: MvpNode, entry: Entry) -> None:
        while not node.is_leaf:
            d1 = self.floor(entry.digest, node.vp1.digest)
            d2 = self.floor(entry.digest, node.vp2.digest)
            side = 0 if d1 <= node.split1 else 1
            slot = 2 * side + (0 if d2 <= node.split2[side] else 1)
            child = node.children[slot]
            if child is None:
                child = node.children[slot] = _Child(MvpNode(), d1, d1, d2, d2)
            else:
                child.widen(d1, d2)
            node = child.node
        node.entries.append(entry)
        if len(node.entries) > LEAF_CAP:
            self._split(node)

    def _split(self, node: MvpNode) -> None:
        pending = node.entries
        node.entries = []
        node.vp1 = pending[0]
        rest = pending[1:]
        far = [self.floor(e.digest, node.vp1.digest) for e in rest]
        node.vp2 = rest[max(range(len(rest)), key=lambda i: (far[i], -i))]
        rest = [e for e in rest if e is not node.vp2]
        d1s = [self.floor(e.digest, node.vp1.digest) for e in rest]
        node.split1 = _median(d1s)
        halves: list[list[tuple[Entry, int, int]]] = [[], []]
        for e, d1 in zip(rest, d1s):
            d2 = self.floor(e.digest, node.vp2.digest)
            halves[0 if d1 <= node.split1 else 1].append((e, d1, d2))
        node.split2 = tuple(_median([d2 for _, _, d2 in h]) if h else 0 for h in halves)
        for side, half in enumerate(halves):
            for e, d1, d2 in half:
                slot = 2 * side + (0 if d2 <= node.split2[side] else 1)
                child = node.children[slot]
                if child is None:
                    child = node.children[slot] = _Child(MvpNode(), d1, d1, d2, d2)
                else:
                    child.widen(d1, d2)
                child.node.entries.append(e)

    # -- queries -----------------------------------------------------------

    def lookup(self, h: TlshDigest, radius: int) -> Optional[int]:
        """Nearest stored state within ``radius``; ties go to the lowest id."""
        if radius < 0:
            raise ValueError("radius must be non-negative")
        if not h.valid or self.count == 0:
            return None
        best: Optional[tuple[int, int]] = None

        def consider(e: Entry) -> None:
            nonlocal best
            d = self.distance_fn(h, e.digest)
            if d <= radius and (best is None or (d, e.state_id) < best):
                best = (d, e.state_id)

        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                for e in node.entries:
                    consider(e)
                continue
            consider(node.vp1)
            consider(node.vp2)
            q1 = self.floor(h, node.vp1.digest)
            q2 = self.floor(h, node.vp2.digest)
            for child in node.children:
                if child is None:
                    continue
                if q1 + radius < child.lo1 or q1 - radius > child.hi1:
                    continue
                if q2 + radius < child.lo2 or q2 - radius > child.hi2:
                    continue
                stack.append(child.node)
        return None if best is None else best[1]

    def linear_lookup(self, h: TlshDigest, radius: int) -> Optional[int]:
        if not h.valid:
            return None
        hits = [(self.distance_fn(h, e.digest), e.state_id) for e in self._entries]
        hits = [x for x in hits if x[0] <= radius]
        return min(hits)[1] if hits else None

    def get_state_id(self, h: TlshDigest, epsilon: int) -> int:
        if not h.valid:
            log.debug("invalid digest mapped to the dummy state")
            return DUMMY_STATE
        found = self.lookup(h, epsilon)
        if found is not None:
            return found
        return self.insert(h)

    # -- export ------------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps([{"state_id": e.state_id, "digest_hex": e.digest.hex()} for e in self._entries])

    @classmethod
    def from_json(cls, text: str) -> "StateRegistry":
        reg = cls()
        for item in sorted(json.loads(text), key=lambda x: x["state_id"]):
            sid = reg.insert(TlshDigest.from_hex(item["digest_hex"]))
            if sid != item["state_id"]:
                raise ValueError(f"state ids must be dense, got {item['state_id']} at position {sid}")
        return reg
