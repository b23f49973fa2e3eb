import random
from pathlib import Path

import numpy as np
from hypothesis import given, settings, strategies as st

from conftest import random_bytes
from oracles import tlsh_distance_from_hex, tlsh_oneshot
from statefuzz import tlsh

VECTORS = Path(__file__).parent / "data" / "tlsh_vectors.tsv"


def test_new_stream_is_empty():
    s = tlsh.stream_new()
    assert s.total_len == 0
    assert not s.bucket_counts.any()


def test_empty_update_is_identity():
    s = tlsh.update(tlsh.stream_new(), b"")
    assert s.total_len == 0 and not s.bucket_counts.any()


def test_fresh_streams_agree():
    data = random_bytes(random.Random(3), 300)
    a = tlsh.finalize(tlsh.update(tlsh.stream_new(), data))
    b = tlsh.finalize(tlsh.update(tlsh.stream_new(), data))
    assert a == b


def test_total_len_and_monotone_buckets():
    s = tlsh.stream_new()
    r = random.Random(8)
    prev = s.bucket_counts.copy()
    total = 0
    for n in (3, 0, 1, 70, 200):
        tlsh.update(s, random_bytes(r, n))
        total += n
        assert s.total_len == total
        assert np.all(s.bucket_counts >= prev)
        prev = s.bucket_counts.copy()


def test_zero_kib_deterministic():
    assert tlsh.hash_bytes(bytes(1024)) == tlsh.hash_bytes(bytes(1024))


def test_short_input_invalid():
    assert not tlsh.finalize(tlsh.stream_new()).valid
    assert not tlsh.hash_bytes(b"x" * (tlsh.MIN_INPUT_LEN - 1)).valid
    assert tlsh.hash_bytes(b"x" * tlsh.MIN_INPUT_LEN).valid


def test_finalize_idempotent():
    s = tlsh.update(tlsh.stream_new(), random_bytes(random.Random(1), 500))
    assert tlsh.finalize(s) == tlsh.finalize(s)


def test_sparse_histogram_still_produces_a_digest():
    d = tlsh.hash_bytes(bytes(60))
    assert d.valid and d.q_ratios == 0


def test_vector_file_matches():
    lines = VECTORS.read_text().splitlines()
    assert len(lines) >= 10
    for line in lines:
        data_hex, digest_hex = line.split("\t")
        assert tlsh.hash_bytes(bytes.fromhex(data_hex)).hex() == digest_hex


def test_oracle_1k_and_4k():
    r = random.Random(77)
    for n in (1024, 4096):
        data = random_bytes(r, n)
        assert tlsh.hash_bytes(data).hex() == tlsh_oneshot(data)


def test_hex_round_trip():
    d = tlsh.hash_bytes(random_bytes(random.Random(2), 200))
    assert tlsh.TlshDigest.from_hex(d.hex()) == d
    assert tlsh.TlshDigest.from_hex("") == tlsh.INVALID_DIGEST


@settings(max_examples=60, deadline=None)
@given(st.binary(min_size=0, max_size=600), st.lists(st.integers(0, 600), max_size=6))
def test_chunking_invariance(data, cuts):
    cuts = sorted({c for c in cuts if c <= len(data)})
    s = tlsh.stream_new()
    prev = 0
    for c in cuts + [len(data)]:
        tlsh.update(s, data[prev:c])
        prev = c
    assert tlsh.finalize(s) == tlsh.hash_bytes(data)


def test_distance_identity_and_symmetry():
    r = random.Random(5)
    for _ in range(50):
        a = tlsh.hash_bytes(random_bytes(r, 120))
        b = tlsh.hash_bytes(random_bytes(r, 300))
        assert tlsh.distance(a, a) == 0
        assert tlsh.distance(a, b) == tlsh.distance(b, a) >= 0


def test_distance_matches_oracle():
    r = random.Random(6)
    for _ in range(30):
        x, y = random_bytes(r, 400), random_bytes(r, r.randrange(50, 900))
        assert tlsh.distance(tlsh.hash_bytes(x), tlsh.hash_bytes(y)) == tlsh_distance_from_hex(
            tlsh_oneshot(x), tlsh_oneshot(y))


def test_invalid_never_close():
    v = tlsh.hash_bytes(bytes(100))
    assert tlsh.distance(v, tlsh.INVALID_DIGEST) == tlsh.MAX_DISTANCE
    assert tlsh.distance(tlsh.INVALID_DIGEST, tlsh.INVALID_DIGEST) == tlsh.MAX_DISTANCE


def test_body_code_scores():
    base = tlsh.TlshDigest(0, 0, 0, bytes(32))
    for code, score in ((1, 1), (2, 2), (3, 6)):
        other = tlsh.TlshDigest(0, 0, 0, bytes([code]) + bytes(31))
        assert tlsh.distance(base, other) == score


def test_header_wraparound():
    a = tlsh.TlshDigest(0, 0, 0, bytes(32))
    b = tlsh.TlshDigest(0, 255, 0, bytes(32))
    assert tlsh.distance(a, b) == 1
    c = tlsh.TlshDigest(0, 0, 0xF0, bytes(32))
    assert tlsh.distance(a, c) == 1
    d = tlsh.TlshDigest(0, 3, 0, bytes(32))
    assert tlsh.distance(a, d) == 36


def test_metric_floor_bounds_distance():
    r = random.Random(9)
    ds = [tlsh.hash_bytes(random_bytes(r, r.randrange(50, 400))) for _ in range(40)]
    for a in ds:
        for b in ds[:10]:
            assert tlsh.metric_floor(a, b) <= tlsh.distance(a, b)
            for c in ds[10:15]:
                assert tlsh.metric_floor(a, b) <= tlsh.metric_floor(a, c) + tlsh.metric_floor(c, b)


def test_locality_sample():
    r = random.Random(11)
    wins = 0
    for _ in range(20):
        x = bytearray(random_bytes(r, 4096))
        y = random_bytes(r, 4096)
        hx = tlsh.hash_bytes(bytes(x))
        x[r.randrange(4096)] ^= 0x5A
        wins += tlsh.distance(hx, tlsh.hash_bytes(bytes(x))) < tlsh.distance(hx, tlsh.hash_bytes(y))
    assert wins >= 19
