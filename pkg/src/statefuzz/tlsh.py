"""Locality-sensitive hashing of byte streams (TLSH-style digests).

A stream accumulates a histogram of 128 buckets from trigrams drawn out of
every 5-byte sliding window, plus a one-byte rolling checksum.  Finalizing
turns the histogram into 2-bit quartile codes (the digest body) and a small
header.  :func:`distance` scores two digests so that near-identical inputs
land close together.

Parameters are fixed: 128 buckets, 1-byte checksum, 32-byte body and a
50-byte minimum input.  Digests are not byte-compatible with other TLSH
implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_BUCKETS = 128
BODY_LEN = N_BUCKETS // 4
MIN_INPUT_LEN = 50
WINDOW = 5
MAX_DISTANCE = 1 << 20

# Fixed 256-entry permutation; the reference oracle in the tests and the
# vector file under tests/data share it.
PERMUTATION = bytes([
     91,   6,  41,  77,   5, 101,   0, 194, 160,  60, 189, 212,  72,  40, 125,  97,
     65,  89, 158, 115,   1, 214, 248, 222, 208,  48,  37, 178, 253, 103,  43, 187,
    186,  17, 163, 153,  75, 203,  90,  54, 242,  79,  56, 180, 116,  95, 114, 121,
    207,  98, 236, 119, 219,  42, 157,  84,  82, 197,  11,   9,  92, 190, 102, 204,
    110, 225, 165, 201, 139, 135, 228,  58, 145,  33,  81,  87, 255, 235, 217, 117,
    108,  27, 174, 130,  61, 148,  18, 152, 169, 226, 232,  20, 162, 224,  46,  29,
     96,  49,  25, 239,  55,  24,  80,  22,  50,  39,  88, 223, 111, 154,  83,  64,
    146,  12, 120,  66, 188,   3,  78, 143,  34, 183,  53, 128, 202,  59, 105,  63,
    182,  99, 220, 100,  86,  69, 192, 113, 127, 244,  45, 175, 181, 241, 167, 112,
    109, 106, 126, 245, 142, 137, 133,  73, 132, 251, 216,  14, 240,  16,  30, 206,
    218, 252, 155,  38, 134, 249, 195, 234, 233, 149, 173, 170, 246,  52, 238, 131,
    122, 227,  44, 172, 150,  23,  93, 177,   2,  28, 140,  76, 184, 107,  36, 215,
    147,  26, 229,  10, 176, 136,  31, 159, 156, 209,  62, 171, 166,   8, 199,   7,
     47,  94, 129,  35, 138, 179, 118,  21, 221,  70, 247, 200, 104, 196, 211, 164,
     15,  19,  85, 243, 124,  57,  71,   4,  51,  32, 213, 151,  67,  13, 210, 250,
    254, 231, 144, 168, 123, 141, 230, 191,  74,  68, 185, 161, 198, 205, 237, 193,
])

# (salt, offsets into the window); offset 0 is the newest byte.
TRIGRAMS = (
    (2, (0, 1, 2)),
    (3, (0, 1, 3)),
    (5, (0, 2, 3)),
    (7, (0, 2, 4)),
    (11, (0, 1, 4)),
    (13, (0, 3, 4)),
)

_P = np.frombuffer(PERMUTATION, dtype=np.uint8)


@dataclass
class TlshStream:
    bucket_counts: np.ndarray = field(default_factory=lambda: np.zeros(N_BUCKETS, dtype=np.int64))
    checksum: int = 0
    total_len: int = 0
    window: bytes = b""

    def copy(self) -> "TlshStream":
        return TlshStream(self.bucket_counts.copy(), self.checksum, self.total_len, self.window)


@dataclass(frozen=True)
class TlshDigest:
    checksum: int
    l_value: int
    q_ratios: int
    body: bytes
    valid: bool = True

    @property
    def q1_ratio(self) -> int:
        return self.q_ratios >> 4

    @property
    def q2_ratio(self) -> int:
        return self.q_ratios & 0x0F

    def codes(self) -> list[int]:
        """The 2-bit quartile code of every bucket, bucket 0 first."""
        return [(byte >> (2 * k)) & 3 for byte in self.body for k in range(4)]

    def hex(self) -> str:
        if not self.valid:
            return ""
        return bytes([self.checksum, self.l_value, self.q_ratios]).hex() + self.body.hex()

    @classmethod
    def from_hex(cls, text: str) -> "TlshDigest":
        if not text:
            return INVALID_DIGEST
        raw = bytes.fromhex(text)
        if len(raw) != 3 + BODY_LEN:
            raise ValueError(f"digest must be {3 + BODY_LEN} bytes, got {len(raw)}")
        return cls(raw[0], raw[1], raw[2], raw[3:])


INVALID_DIGEST = TlshDigest(0, 0, 0, bytes(BODY_LEN), valid=False)


def stream_new() -> TlshStream:
    return TlshStream()


def _mix(salt: int, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    h = _P[np.uint8(_P[salt]) ^ a]
    h = _P[h ^ b]
    return _P[h ^ c]


def update(s: TlshStream, data: bytes) -> TlshStream:
    """Feed ``data`` into the stream in place and return it.

    Windows straddle ``update`` boundaries, so chunking never changes the
    final digest.
    """
    if not data:
        return s
    buf = s.window + bytes(data)
    s.total_len += len(data)
    n_windows = len(buf) - (WINDOW - 1)
    if n_windows > 0:
        arr = np.frombuffer(buf, dtype=np.uint8)
        cols = [arr[WINDOW - 1 - k: WINDOW - 1 - k + n_windows] for k in range(WINDOW)]
        for salt, (i, j, k) in TRIGRAMS:
            b = _mix(salt, cols[i], cols[j], cols[k]) & (N_BUCKETS - 1)
            s.bucket_counts += np.bincount(b, minlength=N_BUCKETS)
        # The checksum folds in its own previous value, so only the first
        # two rounds vectorize.
        pre = _P[_P[np.uint8(_P[0]) ^ cols[0]] ^ cols[1]].tobytes()
        cs = s.checksum
        for x in pre:
            cs = PERMUTATION[x ^ cs]
        s.checksum = cs
    s.window = buf[-(WINDOW - 1):]
    return s


def _l_capture(length: int) -> int:
    if length <= 656:
        v = math.floor(math.log(length) / math.log(1.5))
    elif length <= 3199:
        v = math.floor(math.log(length) / math.log(1.3) - 8.72777)
    else:
        v = math.floor(math.log(length) / math.log(1.1) - 62.5472)
    return v & 0xFF


def finalize(s: TlshStream) -> TlshDigest:
    if s.total_len < MIN_INPUT_LEN:
        return INVALID_DIGEST
    counts = [int(c) for c in s.bucket_counts]
    ordered = sorted(counts)
    q1, q2, q3 = ordered[N_BUCKETS // 4 - 1], ordered[N_BUCKETS // 2 - 1], ordered[3 * N_BUCKETS // 4 - 1]
    body = bytearray(BODY_LEN)
    for i, c in enumerate(counts):
        if c <= q1:
            code = 0
        elif c <= q2:
            code = 1
        elif c <= q3:
            code = 2
        else:
            code = 3
        body[i // 4] |= code << (2 * (i % 4))
    if q3 == 0:
        # Sparse histograms (most buckets empty) are common for memory dumps.
        q_ratios = 0
    else:
        q_ratios = (((q1 * 100) // q3) % 16) << 4 | (((q2 * 100) // q3) % 16)
    return TlshDigest(s.checksum, _l_capture(s.total_len), q_ratios, bytes(body))


def hash_bytes(data: bytes) -> TlshDigest:
    return finalize(update(stream_new(), data))


def _mod_diff(a: int, b: int, r: int) -> int:
    d = abs(a - b)
    return min(d, r - d)


def _code_score(d: int) -> int:
    return 6 if d == 3 else d


def _byte_tables() -> tuple[list[int], list[int]]:
    scored = [0] * 65536
    plain = [0] * 65536
    for x in range(256):
        for y in range(256):
            s = p = 0
            for k in range(4):
                d = abs(((x >> (2 * k)) & 3) - ((y >> (2 * k)) & 3))
                s += _code_score(d)
                p += d
            scored[x << 8 | y] = s
            plain[x << 8 | y] = p
    return scored, plain


_BODY_SCORE, _BODY_L1 = _byte_tables()


def distance(a: TlshDigest, b: TlshDigest) -> int:
    if not (a.valid and b.valid):
        return MAX_DISTANCE
    d = 0
    ld = _mod_diff(a.l_value, b.l_value, 256)
    d += ld if ld <= 1 else ld * 12
    for qa, qb in ((a.q1_ratio, b.q1_ratio), (a.q2_ratio, b.q2_ratio)):
        qd = _mod_diff(qa, qb, 16)
        d += qd if qd <= 1 else (qd - 1) * 12
    if a.checksum != b.checksum:
        d += 1
    table = _BODY_SCORE
    return d + sum(table[x << 8 | y] for x, y in zip(a.body, b.body))


def metric_floor(a: TlshDigest, b: TlshDigest) -> int:
    """A true metric that never exceeds :func:`distance`.

    :func:`distance` breaks the triangle inequality (a code gap of 3 scores 6,
    header gaps jump by a factor of 12), so tree pruning is done on this
    component-wise L1 relaxation instead.
    """
    if not (a.valid and b.valid):
        return MAX_DISTANCE
    d = _mod_diff(a.l_value, b.l_value, 256)
    d += _mod_diff(a.q1_ratio, b.q1_ratio, 16) + _mod_diff(a.q2_ratio, b.q2_ratio, 16)
    d += a.checksum != b.checksum
    table = _BODY_L1
    return d + sum(table[x << 8 | y] for x, y in zip(a.body, b.body))
