"""Input mutation: deterministic walking stages, stacked (havoc) mutation,
message-level operators and trimming.

Byte-level operators touch only the targeted message; message-level
operators replace, insert or duplicate whole messages around it.
"""

from __future__ import annotations

import codecs
import logging
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

from .inputs import MAX_INPUT_BYTES, MAX_MESSAGES, FuzzInput, Provenance

log = logging.getLogger(__name__)

ARITH_MAX = 35
SPLICE_CYCLES = 15
HAVOC_STACK_POW2 = 7

INTERESTING_8 = (-128, -1, 0, 1, 16, 32, 64, 100, 127)
INTERESTING_16 = INTERESTING_8 + (-32768, -129, 128, 255, 256, 512, 1000, 1024, 4096, 32767)
INTERESTING_32 = INTERESTING_16 + (-2147483648, -100663046, -32769, 32768, 65535, 65536,
                                   100663045, 2147483647)

_WIDTH_FMT = {1: "B", 2: "H", 4: "I"}


@dataclass
class Dictionary:
    tokens: list[bytes] = field(default_factory=list)

    def __post_init__(self):
        self.tokens = [bytes(t) for t in self.tokens if t]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def load(cls, path: str | Path) -> "Dictionary":
        return cls.parse(Path(path).read_text(encoding="latin-1"))

    @classmethod
    def parse(cls, text: str) -> "Dictionary":
        tokens = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.endswith('"') and '"' in line[:-1]:
                line = line[line.index('"') + 1:-1]
            tokens.append(codecs.escape_decode(line.encode("latin-1"))[0])
        return cls(tokens)


# -- primitives ---------------------------------------------------------------

def flip_bit(buf: bytearray, bit: int) -> None:
    buf[bit >> 3] ^= 0x80 >> (bit & 7)


def set_byte(buf: bytearray, pos: int, value: int) -> None:
    buf[pos] = value & 0xFF


def add_at(buf: bytearray, pos: int, width: int, delta: int, big_endian: bool = False) -> None:
    fmt = (">" if big_endian else "<") + _WIDTH_FMT[width]
    (v,) = struct.unpack_from(fmt, buf, pos)
    struct.pack_into(fmt, buf, pos, (v + delta) % (1 << (8 * width)))


def put_at(buf: bytearray, pos: int, width: int, value: int, big_endian: bool = False) -> None:
    fmt = (">" if big_endian else "<") + _WIDTH_FMT[width]
    struct.pack_into(fmt, buf, pos, value % (1 << (8 * width)))


def _with_message(inp: FuzzInput, idx: int, msg: bytes, op: str) -> FuzzInput:
    msgs = list(inp.messages)
    msgs[idx] = bytes(msg)
    return FuzzInput(msgs, Provenance(inp.provenance.parent_id, inp.provenance.state_targeted, [op]))


# -- deterministic pass -----------------------------------------------------------

def _walk_bits(msg: bytes, width: int) -> Iterator[bytes]:
    for bit in range(8 * len(msg) - width + 1):
        buf = bytearray(msg)
        for k in range(width):
            flip_bit(buf, bit + k)
        yield bytes(buf)


def _walk_bytes(msg: bytes, width: int) -> Iterator[bytes]:
    for pos in range(len(msg) - width + 1):
        buf = bytearray(msg)
        for k in range(width):
            buf[pos + k] ^= 0xFF
        yield bytes(buf)


def _walk_arith(msg: bytes, width: int) -> Iterator[bytes]:
    endians = (False,) if width == 1 else (False, True)
    for pos in range(len(msg) - width + 1):
        for j in range(1, ARITH_MAX + 1):
            for be in endians:
                for delta in (j, -j):
                    buf = bytearray(msg)
                    add_at(buf, pos, width, delta, be)
                    yield bytes(buf)


def _walk_interesting(msg: bytes, width: int) -> Iterator[bytes]:
    table = {1: INTERESTING_8, 2: INTERESTING_16, 4: INTERESTING_32}[width]
    endians = (False,) if width == 1 else (False, True)
    patterns = []
    for v in table:
        for be in endians:
            raw = (v % (1 << (8 * width))).to_bytes(width, "big" if be else "little")
            # Symmetric constants and byte-swapped pairs (1 vs 256) collide.
            if raw not in patterns:
                patterns.append(raw)
    for pos in range(len(msg) - width + 1):
        for raw in patterns:
            yield msg[:pos] + raw + msg[pos + width:]


def _splice_point(a: bytes, b: bytes) -> int | None:
    n = min(len(a), len(b))
    diffs = [i for i in range(n) if a[i] != b[i]]
    if len(diffs) < 2 or diffs[-1] - diffs[0] < 2:
        return None
    return (diffs[0] + diffs[-1]) // 2


def deterministic_stages(msg: bytes, dictionary: Dictionary | None = None,
                         donors: Sequence[FuzzInput] = (), msg_idx: int = 0) -> Iterator[tuple[str, bytes]]:
    """Yield ``(stage, mutated_message)`` for every walking stage in order."""
    yield from (("flip1", m) for m in _walk_bits(msg, 1))
    yield from (("flip2", m) for m in _walk_bits(msg, 2))
    yield from (("flip4", m) for m in _walk_bits(msg, 4))
    yield from (("flip8", m) for m in _walk_bytes(msg, 1))
    yield from (("flip16", m) for m in _walk_bytes(msg, 2))
    yield from (("flip32", m) for m in _walk_bytes(msg, 4))
    yield from (("arith8", m) for m in _walk_arith(msg, 1))
    yield from (("arith16", m) for m in _walk_arith(msg, 2))
    yield from (("arith32", m) for m in _walk_arith(msg, 4))
    yield from (("interest8", m) for m in _walk_interesting(msg, 1))
    yield from (("interest16", m) for m in _walk_interesting(msg, 2))
    yield from (("interest32", m) for m in _walk_interesting(msg, 4))
    tokens = dictionary.tokens if dictionary else []
    for tok in tokens:
        for pos in range(len(msg) - len(tok) + 1):
            yield "dict_over", msg[:pos] + tok + msg[pos + len(tok):]
    for tok in tokens:
        for pos in range(len(msg) + 1):
            yield "dict_insert", msg[:pos] + tok + msg[pos:]
    for donor in list(donors)[:SPLICE_CYCLES]:
        if not donor.messages:
            continue
        other = donor.messages[min(msg_idx, len(donor.messages) - 1)]
        cut = _splice_point(msg, other)
        if cut is not None:
            yield "splice", msg[:cut] + other[cut:]


def deterministic_pass(inp: FuzzInput, msg_idx: int, dictionary: Dictionary | None = None,
                       donors: Sequence[FuzzInput] = ()) -> Iterator[FuzzInput]:
    if msg_idx >= len(inp.messages):
        return
    for stage, msg in deterministic_stages(inp.messages[msg_idx], dictionary, donors, msg_idx):
        yield _with_message(inp, msg_idx, msg, stage)


# -- stacked mutation -----------------------------------------------------------

def _block_len(rng: random.Random, limit: int) -> int:
    lo, hi = ((1, 32), (32, 128), (128, 1500))[rng.randrange(3)]
    if hi == 1500 and rng.randrange(10) == 0:
        lo, hi = 1500, 32768
    if lo > limit:
        lo = 1
    hi = min(hi, limit)
    return lo + rng.randrange(hi - lo + 1)


class _Work:
    """Mutable view of an input while operators are stacked on it."""

    def __init__(self, inp: FuzzInput, idx: int, corpus: Sequence[FuzzInput], dictionary: Dictionary):
        self.msgs = [bytearray(m) for m in inp.messages]
        if idx >= len(self.msgs):
            self.msgs.append(bytearray())
            self.appended = True
        else:
            self.appended = False
        self.idx = min(idx, len(self.msgs) - 1)
        self.corpus = corpus
        self.dictionary = dictionary

    @property
    def buf(self) -> bytearray:
        return self.msgs[self.idx]

    def size(self) -> int:
        return sum(len(m) for m in self.msgs)

    def random_message(self, rng: random.Random) -> bytes | None:
        donors = [c for c in self.corpus if c.messages]
        if not donors:
            return None
        return rng.choice(rng.choice(donors).messages)


def _op_bitflip(w, rng):
    if w.buf:
        flip_bit(w.buf, rng.randrange(8 * len(w.buf)))


def _interest(width):
    table = {1: INTERESTING_8, 2: INTERESTING_16, 4: INTERESTING_32}[width]

    def op(w, rng):
        if len(w.buf) >= width:
            put_at(w.buf, rng.randrange(len(w.buf) - width + 1), width, rng.choice(table), rng.random() < 0.5)
    return op


def _arith(width, sign):
    def op(w, rng):
        if len(w.buf) >= width:
            add_at(w.buf, rng.randrange(len(w.buf) - width + 1), width,
                   sign * (1 + rng.randrange(ARITH_MAX)), rng.random() < 0.5)
    return op


def _op_randbyte(w, rng):
    if w.buf:
        pos = rng.randrange(len(w.buf))
        w.buf[pos] ^= 1 + rng.randrange(255)


def _op_delete(w, rng):
    if len(w.buf) >= 2:
        n = _block_len(rng, len(w.buf) - 1)
        pos = rng.randrange(len(w.buf) - n + 1)
        del w.buf[pos:pos + n]


def _op_clone(w, rng):
    if w.buf:
        n = _block_len(rng, len(w.buf))
        src = rng.randrange(len(w.buf) - n + 1)
        chunk = w.buf[src:src + n]
        pos = rng.randrange(len(w.buf) + 1)
        w.buf[pos:pos] = chunk


def _op_insert_const(w, rng):
    n = _block_len(rng, max(len(w.buf), 128))
    fill = rng.randrange(256) if rng.random() < 0.5 else (w.buf[rng.randrange(len(w.buf))] if w.buf else 0)
    pos = rng.randrange(len(w.buf) + 1)
    w.buf[pos:pos] = bytes([fill]) * n


def _op_overwrite_chunk(w, rng):
    if len(w.buf) >= 2:
        n = _block_len(rng, len(w.buf) - 1)
        src = rng.randrange(len(w.buf) - n + 1)
        dst = rng.randrange(len(w.buf) - n + 1)
        if src != dst:
            w.buf[dst:dst + n] = bytes(w.buf[src:src + n])


def _op_overwrite_fixed(w, rng):
    if w.buf:
        n = _block_len(rng, len(w.buf))
        dst = rng.randrange(len(w.buf) - n + 1)
        fill = rng.randrange(256) if rng.random() < 0.5 else w.buf[rng.randrange(len(w.buf))]
        w.buf[dst:dst + n] = bytes([fill]) * n


def _op_dict_over(w, rng):
    tok = rng.choice(w.dictionary.tokens)
    if len(tok) <= len(w.buf):
        pos = rng.randrange(len(w.buf) - len(tok) + 1)
        w.buf[pos:pos + len(tok)] = tok


def _op_dict_insert(w, rng):
    tok = rng.choice(w.dictionary.tokens)
    pos = rng.randrange(len(w.buf) + 1)
    w.buf[pos:pos] = tok


def _op_msg_replace(w, rng):
    m = w.random_message(rng)
    if m is not None:
        w.msgs[w.idx] = bytearray(m)


def _op_msg_insert_before(w, rng):
    m = w.random_message(rng)
    if m is not None and len(w.msgs) < MAX_MESSAGES:
        w.msgs.insert(w.idx, bytearray(m))
        w.idx += 1


def _op_msg_insert_after(w, rng):
    m = w.random_message(rng)
    if m is not None and len(w.msgs) < MAX_MESSAGES:
        w.msgs.insert(w.idx + 1, bytearray(m))


def _op_msg_duplicate(w, rng):
    if len(w.msgs) < MAX_MESSAGES:
        w.msgs.insert(w.idx + 1, bytearray(w.buf))


BYTE_OPERATORS: dict[str, Callable] = {
    "bitflip": _op_bitflip,
    "interest8": _interest(1),
    "interest16": _interest(2),
    "interest32": _interest(4),
    "sub8": _arith(1, -1),
    "add8": _arith(1, 1),
    "sub16": _arith(2, -1),
    "add16": _arith(2, 1),
    "sub32": _arith(4, -1),
    "add32": _arith(4, 1),
    "randbyte": _op_randbyte,
    "delete": _op_delete,
    "clone": _op_clone,
    "insert_const": _op_insert_const,
    "overwrite_chunk": _op_overwrite_chunk,
    "overwrite_fixed": _op_overwrite_fixed,
}
DICT_OPERATORS: dict[str, Callable] = {"dict_over": _op_dict_over, "dict_insert": _op_dict_insert}
MESSAGE_OPERATORS: dict[str, Callable] = {
    "msg_replace": _op_msg_replace,
    "msg_insert_before": _op_msg_insert_before,
    "msg_insert_after": _op_msg_insert_after,
    "msg_duplicate": _op_msg_duplicate,
}


def _operator_pool(dictionary: Dictionary, message_weight: float) -> tuple[list[str], list[float]]:
    names = list(BYTE_OPERATORS)
    weights = [1.0] * len(names)
    if dictionary.tokens:
        names += list(DICT_OPERATORS)
        weights += [1.0] * len(DICT_OPERATORS)
    if message_weight > 0:
        names += list(MESSAGE_OPERATORS)
        weights += [message_weight / len(MESSAGE_OPERATORS)] * len(MESSAGE_OPERATORS)
    return names, weights


_ALL_OPERATORS = {**BYTE_OPERATORS, **DICT_OPERATORS, **MESSAGE_OPERATORS}


def stacked_mutation(inp: FuzzInput, msg_idx: int, corpus: Sequence[FuzzInput],
                     dictionary: Dictionary | None, rng: random.Random,
                     message_weight: float = 4.0) -> FuzzInput:
    """Apply 2**k randomly drawn operators (k uniform in 1..7) to one input.

    ``message_weight`` is the combined draw weight of the four message-level
    operators, in units of one byte-level operator.  ``msg_idx`` equal to
    the message count targets a fresh empty message appended to the input.
    """
    dictionary = dictionary or Dictionary()
    names, weights = _operator_pool(dictionary, message_weight)
    w = _Work(inp, msg_idx, corpus, dictionary)
    applied = []
    n_ops = 1 << rng.randint(1, HAVOC_STACK_POW2)
    for _ in range(n_ops):
        name = rng.choices(names, weights)[0]
        before_msgs = [bytearray(m) for m in w.msgs] if name in MESSAGE_OPERATORS else None
        before_buf = bytearray(w.buf) if before_msgs is None else None
        before_idx = w.idx
        _ALL_OPERATORS[name](w, rng)
        if w.size() > MAX_INPUT_BYTES:
            if before_msgs is not None:
                w.msgs, w.idx = before_msgs, before_idx
            else:
                w.msgs[w.idx] = before_buf
            continue
        applied.append(name)
    msgs = [bytes(m) for m in w.msgs]
    if w.appended and not msgs[w.idx]:
        del msgs[w.idx]
    if not msgs:
        msgs = [b""]
    return FuzzInput(msgs, Provenance(inp.provenance.parent_id, inp.provenance.state_targeted, applied))


# -- trimming -------------------------------------------------------------------

def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p <<= 1
    return p


def trim_input(inp: FuzzInput, oracle: Callable[[FuzzInput], bool],
               min_block: int = 4) -> FuzzInput:
    """Shrink ``inp`` while ``oracle`` keeps holding.

    Whole messages are dropped first (last to first), then byte blocks of
    decreasing power-of-two size inside each message.
    """
    if not oracle(inp):
        log.warning("trim oracle rejects the original input; trimming aborted")
        return inp
    msgs = list(inp.messages)
    i = len(msgs) - 1
    while i >= 0 and len(msgs) > 1:
        cand = msgs[:i] + msgs[i + 1:]
        if oracle(FuzzInput(cand)):
            msgs = cand
        i -= 1
    for m in range(len(msgs)):
        step = max(min_block, _next_pow2(len(msgs[m])) // 16)
        while step >= min_block:
            pos = 0
            while pos < len(msgs[m]):
                cut = msgs[m][:pos] + msgs[m][pos + step:]
                cand = msgs[:m] + [cut] + msgs[m + 1:]
                if oracle(FuzzInput(cand)):
                    msgs = cand
                else:
                    pos += step
            step //= 2
    out = FuzzInput(msgs, inp.provenance)
    if not oracle(out):
        log.warning("trim oracle is not deterministic; keeping the original input")
        return inp
    return out
