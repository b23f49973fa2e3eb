"""Inferred protocol state machine and state selection."""

from __future__ import annotations

import json
import random
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

DUMMY_STATE = 0
INTERESTING_CAP = 64


class StaleCorpusError(LookupError):
    pass


class _HasSequence(Protocol):
    state_seq: list[int] | None
    iteration_messages: list[int] | None


@dataclass
class StateStats:
    fuzzs: int = 0
    paths: int = 0
    selected: int = 0
    interesting_inputs: deque = field(default_factory=lambda: deque(maxlen=INTERESTING_CAP))

    def weight(self) -> float:
        return (self.paths + 1) / ((self.fuzzs + 1) * (self.selected + 1))


class Ipsm:
    def __init__(self):
        self.stats: dict[int, StateStats] = {DUMMY_STATE: StateStats()}
        self.transitions: dict[tuple[int, int], int] = {}

    @property
    def states(self) -> set[int]:
        return set(self.stats)

    def ingest_sequence(self, input_id, seq: Sequence[int], was_interesting: bool = False) -> list[int]:
        """Grow the machine from one observed sequence; returns new state ids."""
        new = []
        path = [DUMMY_STATE, *seq]
        for s in seq:
            if s not in self.stats:
                self.stats[s] = StateStats()
                new.append(s)
        for a, b in zip(path, path[1:]):
            self.transitions[(a, b)] = self.transitions.get((a, b), 0) + 1
        if was_interesting:
            for s in dict.fromkeys(path):
                self.stats[s].interesting_inputs.append(input_id)
        return new

    def eligible(self) -> list[int]:
        return sorted(s for s, st in self.stats.items() if st.interesting_inputs)

    def select_state(self, rng: random.Random) -> int:
        cands = self.eligible()
        if not cands:
            return DUMMY_STATE
        weights = [self.stats[s].weight() for s in cands]
        s = rng.choices(cands, weights=weights)[0]
        self.stats[s].selected += 1
        return s

    def pick_input_and_position(self, s: int, rng: random.Random,
                                corpus: Mapping[object, _HasSequence]) -> tuple[object, int]:
        """Choose an interesting input that reached ``s`` and the message sent from it.

        Inputs that vanished from ``corpus`` are dropped from the state's list.
        """
        st = self.stats.get(s)
        if st is None:
            raise KeyError(s)
        while st.interesting_inputs:
            input_id = rng.choice(list(st.interesting_inputs))
            entry = corpus.get(input_id)
            if entry is None:
                st.interesting_inputs.remove(input_id)
                continue
            return input_id, message_index_for(entry, s)
        raise StaleCorpusError(f"state {s} has no input left in the corpus")

    def record_fuzz(self, s: int) -> None:
        self.stats[s].fuzzs += 1

    def record_path(self, s: int) -> None:
        self.stats[s].paths += 1

    # -- export ------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "states": [
                {"state_id": s, "fuzzs": st.fuzzs, "paths": st.paths, "selected": st.selected,
                 "n_interesting": len(st.interesting_inputs)}
                for s, st in sorted(self.stats.items())
            ],
            "transitions": [{"from": a, "to": b, "count": n} for (a, b), n in sorted(self.transitions.items())],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_dot(self) -> str:
        lines = ["digraph ipsm {", f"  {DUMMY_STATE} [shape=doublecircle];"]
        for s in sorted(self.stats):
            if s != DUMMY_STATE:
                lines.append(f"  {s};")
        for (a, b), n in sorted(self.transitions.items()):
            lines.append(f'  {a} -> {b} [label="n={n}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Ipsm":
        m = cls()
        for item in data["states"]:
            st = m.stats.setdefault(item["state_id"], StateStats())
            st.fuzzs, st.paths, st.selected = item["fuzzs"], item["paths"], item["selected"]
        for t in data["transitions"]:
            m.transitions[(t["from"], t["to"])] = t["count"]
        return m


_VERTEX = re.compile(r"^\s*(\d+)\s*(\[[^\]]*\])?\s*;\s*$")
_EDGE = re.compile(r'^\s*(\d+)\s*->\s*(\d+)\s*(?:\[label="n=(\d+)"\])?\s*;\s*$')


def parse_dot(text: str) -> tuple[set[int], dict[tuple[int, int], int]]:
    """Read back vertices and labelled edges written by :meth:`Ipsm.to_dot`."""
    vertices: set[int] = set()
    edges: dict[tuple[int, int], int] = {}
    for line in text.splitlines():
        if m := _EDGE.match(line):
            a, b = int(m[1]), int(m[2])
            edges[(a, b)] = int(m[3]) if m[3] else 0
            vertices.update((a, b))
        elif m := _VERTEX.match(line):
            vertices.add(int(m[1]))
    return vertices, edges


def message_index_for(entry: _HasSequence, s: int) -> int:
    """Index of the message sent from state ``s`` in ``entry``.

    The first iteration that ended in ``s`` fixes the position; the state
    after it is left by the next message.
    """
    if s == DUMMY_STATE:
        return 0
    seq = entry.state_seq or []
    msgs = entry.iteration_messages or list(range(len(seq)))
    for k, sid in enumerate(seq):
        if sid == s:
            return msgs[k] + 1
    raise StaleCorpusError(f"input does not reach state {s}")
