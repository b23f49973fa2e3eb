import struct

import pytest
from hypothesis import given, strategies as st

from statefuzz.inputs import (MAGIC, FuzzInput, SaflFormatError, decode, encode, load_seed_dir, read_input,
                              write_input)


def test_layout_bit_exact():
    raw = encode([b"ab", b""])
    assert raw == MAGIC + bytes([1]) + struct.pack("<I", 2) + struct.pack("<I", 2) + b"ab" + struct.pack("<I", 0)


@given(st.lists(st.binary(max_size=64), max_size=8))
def test_round_trip(msgs):
    raw = encode(msgs)
    assert decode(raw) == msgs
    assert encode(decode(raw)) == raw


def test_file_round_trip_byte_identical(tmp_path):
    inp = FuzzInput([b"USER a\r\n", b"\x00\xff", b""])
    p1 = write_input(tmp_path / "a.safl", inp)
    p2 = write_input(tmp_path / "b.safl", read_input(p1))
    assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.parametrize("raw,offset", [
    (b"XXXX\x01\x00\x00\x00\x00", 0),
    (b"SAFL\x01\x01", 6),
    (b"SAFL\x02\x00\x00\x00\x00", 4),
    (b"SAFL\x01\x01\x00\x00\x00\x05\x00", 9),
    (b"SAFL\x01\x01\x00\x00\x00\x05\x00\x00\x00ab", 13),
    (b"SAFL\x01\x00\x00\x00\x00junk", 9),
])
def test_malformed_names_offset(raw, offset):
    with pytest.raises(SaflFormatError) as exc:
        decode(raw)
    assert exc.value.offset == offset
    assert f"offset {offset}" in str(exc.value)


def test_truncated_real_file(tmp_path):
    raw = encode([b"hello world", b"second"])
    with pytest.raises(SaflFormatError, match="offset"):
        decode(raw[:-3])


def test_validity_caps():
    assert not FuzzInput([]).valid()
    assert FuzzInput([b""]).valid()
    assert not FuzzInput([b""] * 513).valid()
    assert not FuzzInput([bytes((1 << 20) + 1)]).valid()


def test_seed_dir(tmp_path):
    write_input(tmp_path / "b.safl", [b"2"])
    write_input(tmp_path / "a.safl", [b"1"])
    (tmp_path / "notes.txt").write_text("ignored")
    assert [s.messages for s in load_seed_dir(tmp_path)] == [[b"1"], [b"2"]]
    with pytest.raises(FileNotFoundError):
        load_seed_dir(tmp_path / "missing")
