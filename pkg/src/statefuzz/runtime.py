"""Instrumentation runtime called by targets.

Targets report allocations, frees, receives and sends.  The runtime tracks
request/reply iterations with a three-phase machine, snapshots every
tracked area when an iteration closes, and at process end turns the
snapshots of long-lived areas into one state id per iteration.

Areas are registered byte buffers identified by an opaque ``addr``; the
runtime zero-fills them on allocation and copies them on dump.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from . import tlsh
from .mvptree import DUMMY_STATE, StateRegistry
from .tlsh import TlshDigest

log = logging.getLogger(__name__)

STACK_TRACK_THRESHOLD = 64


class Phase(enum.Enum):
    FRESH = "fresh"
    RECEIVING = "receiving"
    SENDING = "sending"


@dataclass
class IterationFsm:
    phase: Phase = Phase.FRESH
    current_iter_no: int = 0


@dataclass
class AllocRecord:
    iter_no_init: int
    iter_no_end: int
    addr: int
    size: int
    seq: int
    area: bytearray = field(repr=False, default_factory=bytearray)
    kind: str = "heap"

    def is_long_lived(self, total_iterations: int) -> bool:
        if self.iter_no_init > 0:
            return False
        return self.iter_no_end == -1 or self.iter_no_end >= total_iterations


@dataclass
class AllocDump:
    iter_no_dumped: int
    record: AllocRecord
    contents: bytes

    @property
    def iteration(self) -> int:
        """1-based iteration label, as shown in reports."""
        return self.iter_no_dumped + 1


class RuntimeState:
    """Per-execution instrumentation state.

    ``snapshots=False`` keeps the iteration machine and allocation records
    but skips memory dumps; the engine uses it for the fast path and turns
    it on only when re-running an input for analysis.
    """

    def __init__(self, snapshots: bool = True, stack_threshold: int = STACK_TRACK_THRESHOLD,
                 spool: bool = False, trace: bool = False):
        self.snapshots = snapshots
        self.stack_threshold = stack_threshold
        self.spool = spool
        self.trace = trace
        self.on_process_start()

    # -- hooks -------------------------------------------------------------

    def on_process_start(self) -> None:
        self.alloc_records_map: dict[int, AllocRecord] = {}
        self.alloc_dumps_queue: list[AllocDump] = []
        self.fsm = IterationFsm()
        self.total_iterations: Optional[int] = None
        self.states_sequence: list[int] = []
        self.digests: list[TlshDigest] = []
        self.iteration_bytes: list[bytes] = []
        self.iteration_messages: list[int] = []
        self.current_message = -1
        self.events: list[tuple] = []
        self._seq = 0
        self._freed: set[int] = set()

    @property
    def current_iter_no(self) -> int:
        return self.fsm.current_iter_no

    @property
    def phase(self) -> Phase:
        return self.fsm.phase

    def on_allocate(self, addr: int, size: int, area: Optional[bytearray] = None,
                    kind: str = "heap") -> bytearray:
        """Register an area; returns the (zero-filled) buffer backing it."""
        if area is None:
            area = bytearray(size)
        if self.trace:
            self.events.append(("alloc", addr, size, kind))
        if self.fsm.current_iter_no != 0:
            return area
        if kind == "stack" and size <= self.stack_threshold:
            return area
        if addr in self.alloc_records_map:
            log.warning("area %#x allocated twice without free; replacing record", addr)
        area[:] = bytes(len(area))
        self.alloc_records_map[addr] = AllocRecord(0, -1, addr, size, self._seq, area, kind)
        self._seq += 1
        self._freed.discard(addr)
        return area

    def register_static(self, addr: int, area: bytearray) -> bytearray:
        """Globals and thread-locals: tracked like an iteration-0 heap area."""
        return self.on_allocate(addr, len(area), area, kind="static")

    def on_free(self, addr: int) -> None:
        if self.trace:
            self.events.append(("free", addr))
        rec = self.alloc_records_map.pop(addr, None)
        if rec is None:
            if addr in self._freed:
                log.debug("double free of tracked area %#x ignored", addr)
            return
        rec.iter_no_end = self.fsm.current_iter_no
        self._freed.add(addr)

    def on_receive(self) -> None:
        if self.trace:
            self.events.append(("recv",))
        if self.fsm.phase is not Phase.RECEIVING:
            self.fsm.phase = Phase.RECEIVING

    def on_send(self) -> None:
        if self.trace:
            self.events.append(("send",))
        if self.fsm.phase is Phase.RECEIVING:
            self.fsm.phase = Phase.SENDING
            self.dump_current_state()
            self.iteration_messages.append(self.current_message)
            self.fsm.current_iter_no += 1

    def dump_current_state(self) -> None:
        if not self.snapshots:
            return
        it = self.fsm.current_iter_no
        for rec in sorted(self.alloc_records_map.values(), key=lambda r: r.seq):
            self.alloc_dumps_queue.append(AllocDump(it, rec, bytes(rec.area)))

    def on_process_end(self, registry: Optional[StateRegistry] = None, epsilon: int = 0) -> list[int]:
        """Close the run and publish its state sequence.

        Without a registry only the per-iteration digests are computed (the
        calibration path reads them from :attr:`digests`).
        """
        self.total_iterations = self.fsm.current_iter_no
        return self.save_state_seq(registry, epsilon)

    # -- analysis ----------------------------------------------------------

    def iteration_digests(self) -> list[TlshDigest]:
        total = self.fsm.current_iter_no if self.total_iterations is None else self.total_iterations
        streams: list[Optional[tlsh.TlshStream]] = [None] * total
        raw: list[bytearray] = [bytearray() for _ in range(total)] if self.spool else []
        for d in self.alloc_dumps_queue:
            if not d.record.is_long_lived(total) or d.iter_no_dumped >= total:
                continue
            s = streams[d.iter_no_dumped]
            if s is None:
                s = streams[d.iter_no_dumped] = tlsh.stream_new()
            tlsh.update(s, d.contents)
            if self.spool:
                raw[d.iter_no_dumped] += d.contents
        out = []
        for i, s in enumerate(streams):
            if s is None:
                out.append(tlsh.INVALID_DIGEST)
                continue
            if s.total_len < tlsh.MIN_INPUT_LEN:
                pad = tlsh.MIN_INPUT_LEN - s.total_len
                tlsh.update(s, bytes(pad))
                if self.spool:
                    raw[i] += bytes(pad)
            out.append(tlsh.finalize(s))
        if self.spool:
            self.iteration_bytes = [bytes(r) if streams[i] is not None else b"" for i, r in enumerate(raw)]
        return out

    def save_state_seq(self, registry: Optional[StateRegistry], epsilon: int) -> list[int]:
        self.digests = self.iteration_digests()
        if registry is None:
            self.states_sequence = []
        else:
            # Iterations without long-lived dumps carry an invalid digest,
            # which the registry maps to the dummy state.
            self.states_sequence = [registry.get_state_id(h, epsilon) if h.valid else DUMMY_STATE
                                    for h in self.digests]
        return self.states_sequence

    def write_state_trace(self, path, input_id) -> None:
        """Debug dump of the published sequence as ``{input_id, states}``."""
        with open(path, "w") as fh:
            json.dump({"input_id": input_id, "states": self.states_sequence}, fh)
