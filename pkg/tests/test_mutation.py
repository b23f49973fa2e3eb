import random
import subprocess
import sys
from collections import Counter, defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from oracles import mutation_counts
from statefuzz.coverage import CoverageMap
from statefuzz.inputs import MAX_INPUT_BYTES, MAX_MESSAGES, FuzzInput
from statefuzz.mutation import (INTERESTING_8, INTERESTING_16, INTERESTING_32, MESSAGE_OPERATORS, Dictionary,
                                _op_msg_duplicate, _Work, add_at, deterministic_pass, deterministic_stages,
                                flip_bit, set_byte, stacked_mutation, trim_input)
from statefuzz.runtime import RuntimeState
from statefuzz.targets import InProcessChannel, target_miniftp


def _stage_counts(msg, tokens=()):
    return Counter(stage for stage, _ in deterministic_stages(msg, Dictionary(list(tokens))))


def test_constant_tables():
    assert (len(INTERESTING_8), len(INTERESTING_16), len(INTERESTING_32)) == (9, 19, 27)


@pytest.mark.parametrize("length", [0, 1, 2, 3, 4, 7])
def test_closed_form_counts(length):
    msg = bytes(range(0x61, 0x61 + length))
    tokens = [b"AB", b"xyz12"]
    got = _stage_counts(msg, tokens)
    want = {k: v for k, v in mutation_counts(length, tokens).items() if v}
    assert {k: v for k, v in got.items() if k != "splice"} == want


def test_single_bit_flip_on_ab():
    mutants = [m for s, m in deterministic_stages(b"ab") if s == "flip1"]
    assert len(mutants) == 16
    for m in mutants:
        diff = int.from_bytes(m, "big") ^ int.from_bytes(b"ab", "big")
        assert bin(diff).count("1") == 1


def test_walking_bit_positions():
    parent = b"\x00\x00"
    mutants = [m for s, m in deterministic_stages(parent) if s == "flip1"][:3]
    assert [m[0] for m in mutants] == [0x80, 0x40, 0x20]


def test_interesting32_on_four_bytes():
    mutants = [m for s, m in deterministic_stages(b"abcd") if s == "interest32"]
    assert len(mutants) == mutation_counts(4)["interest32"]
    assert len(set(mutants)) == len(mutants)


def test_stages_duplicate_free_on_ab():
    per_stage = defaultdict(list)
    for s, m in deterministic_stages(b"ab", Dictionary([b"Q"])):
        per_stage[s].append(m)
    for stage, ms in per_stage.items():
        assert len(set(ms)) == len(ms), stage


def test_other_messages_untouched():
    parent = FuzzInput([b"one", b"two", b"three"])
    for mutant in deterministic_pass(parent, 1, Dictionary([b"ZZ"]), [FuzzInput([b"a", b"tw0-donor"])]):
        assert mutant.messages[0] == b"one" and mutant.messages[2] == b"three"
        assert mutant.provenance.operators_applied


def test_pass_skipped_past_end():
    assert list(deterministic_pass(FuzzInput([b"x"]), 1)) == []


def test_empty_message_only_dict_and_splice():
    stages = _stage_counts(b"", [b"tok"])
    assert set(stages) == {"dict_insert"}


def test_splice_uses_donor_tail():
    out = [m for s, m in deterministic_stages(b"AAAAAAAAAA", None, [FuzzInput([b"AxAAAAAAyA"])]) if s == "splice"]
    assert len(out) == 1
    assert out[0][:5] == b"AAAAA" and out[0][5:] == b"AAAyA"


def test_stacked_composition_example():
    buf = bytearray(b"\x10\x20\x30")
    flip_bit(buf, 0)
    set_byte(buf, 1, 0xCC)
    add_at(buf, 2, 1, 3)
    assert bytes(buf) == b"\x90\xcc\x33"


def test_duplicate_message():
    w = _Work(FuzzInput([b"a", b"b", b"c"]), 1, [], Dictionary())
    _op_msg_duplicate(w, random.Random(0))
    assert [bytes(m) for m in w.msgs] == [b"a", b"b", b"b", b"c"]


def test_stacked_reproducible_in_process():
    parent = FuzzInput([b"USER x\r\n", b"PASS y\r\n"])
    corpus = [parent, FuzzInput([b"NOOP\r\n"])]
    a = stacked_mutation(parent, 1, corpus, Dictionary([b"STOR "]), random.Random(99))
    b = stacked_mutation(parent, 1, corpus, Dictionary([b"STOR "]), random.Random(99))
    assert a.messages == b.messages and a.provenance.operators_applied == b.provenance.operators_applied


_SCRIPT = """
import random
from statefuzz.inputs import FuzzInput
from statefuzz.mutation import Dictionary, stacked_mutation
p = FuzzInput([b"USER x\\r\\n", b"PASS y\\r\\n", b"LIST\\r\\n"])
r = random.Random(2024)
out = [stacked_mutation(p, i % 3, [p], Dictionary([b"STOR "]), r).to_bytes().hex() for i in range(50)]
print(":".join(out))
"""


def test_stacked_bit_reproducible_across_processes():
    runs = [subprocess.run([sys.executable, "-c", _SCRIPT], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert runs[0] == runs[1] and len(runs[0]) > 100


@settings(max_examples=80, deadline=None)
@given(st.lists(st.binary(max_size=40), min_size=1, max_size=5), st.integers(0, 5), st.integers(0, 2 ** 32))
def test_stacked_closure(msgs, idx, seed):
    parent = FuzzInput(msgs)
    idx = min(idx, len(msgs))
    out = stacked_mutation(parent, idx, [parent], Dictionary([b"tok"]), random.Random(seed))
    assert out.valid()
    assert 1 <= len(out.messages) <= MAX_MESSAGES and out.size <= MAX_INPUT_BYTES


def test_size_cap_enforced():
    big = FuzzInput([bytes(MAX_INPUT_BYTES - 10)])
    r = random.Random(1)
    for _ in range(20):
        out = stacked_mutation(big, 0, [big], Dictionary(), r)
        assert out.size <= MAX_INPUT_BYTES


def test_message_operators_can_be_disabled():
    r = random.Random(4)
    for _ in range(30):
        out = stacked_mutation(FuzzInput([b"abc"]), 0, [FuzzInput([b"zz", b"yy"])], Dictionary(), r, 0)
        assert not set(out.provenance.operators_applied) & set(MESSAGE_OPERATORS)
        assert len(out.messages) == 1


def test_dictionary_parse():
    d = Dictionary.parse('# comment\n\nkw1="USER "\n"\\x00\\r\\n"\nbare\n')
    assert d.tokens == [b"USER ", b"\x00\r\n", b"bare"]


# -- trimming ----------------------------------------------------------------

def _run(inp):
    cov = CoverageMap()
    rt = RuntimeState()
    res = InProcessChannel().run(target_miniftp(), inp.messages, rt, cov)
    return cov, res


def test_trim_drops_unread_suffix():
    inp = FuzzInput([b"USER ftp\r\n", b"QUIT\r\n", b"NOOP\r\n"])
    sig = _run(inp)[0].signature()
    out = trim_input(inp, lambda c: _run(c)[0].signature() == sig)
    assert len(out.messages) == 2 and out.messages[1].startswith(b"QUIT")


def test_trim_fixpoint():
    inp = FuzzInput([b"NOOP"])
    sig = _run(inp)[0].signature()
    assert trim_input(inp, lambda c: _run(c)[0].signature() == sig).messages == inp.messages


def test_trim_removes_redundant_noops():
    from statefuzz.mvptree import StateRegistry

    reg = StateRegistry()

    def states(c):
        rt = RuntimeState()
        InProcessChannel().run(target_miniftp(), c.messages, rt, CoverageMap())
        return set(rt.on_process_end(reg, 5))

    inp = FuzzInput([b"USER ftp\r\n", b"NOOP\r\n", b"PASS x\r\n", b"NOOP\r\n", b"NOOP\r\n", b"QUIT\r\n"])
    want = states(inp)
    out = trim_input(inp, lambda c: states(c) == want, min_block=64)
    assert b"NOOP\r\n" not in out.messages
    assert states(out) == want


def test_trim_aborts_on_flaky_oracle():
    calls = iter([True, False, False, False, False, False, False, False, False, False, False])
    inp = FuzzInput([b"a", b"b"])
    assert trim_input(inp, lambda c: next(calls, False)) is inp
