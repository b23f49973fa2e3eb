import json
import logging

from statefuzz import tlsh
from statefuzz.mvptree import StateRegistry
from statefuzz.runtime import AllocRecord, Phase, RuntimeState


def _three_iteration_run(track_short_lived=True):
    """One long-lived area plus one short-lived area per iteration, three iterations.

    Short-lived areas allocated after iteration 0 are not tracked by the
    runtime; with ``track_short_lived`` they are inserted by hand so the dump
    queue shows them, as in the worked example.
    """
    rt = RuntimeState()
    rt.on_process_start()
    long_area = rt.on_allocate(0x100, 128)
    for it in range(3):
        rt.on_receive()
        addr = 0x200 + it
        if track_short_lived:
            rt.alloc_records_map[addr] = AllocRecord(it, -1, addr, 32, 1000 + it, bytearray(b"s" * 32))
        long_area[it] = 0x41 + it
        rt.on_send()
        rt.on_free(addr)
    rt.on_free(0x100)
    return rt, long_area


def test_process_start_resets():
    rt = RuntimeState()
    rt.on_allocate(1, 100)
    rt.on_receive()
    rt.on_send()
    rt.on_process_start()
    assert rt.current_iter_no == 0 and rt.phase is Phase.FRESH
    assert rt.alloc_records_map == {} and rt.alloc_dumps_queue == []


def test_restart_gives_independent_sequences():
    reg = StateRegistry()
    seqs = []
    for _ in range(2):
        rt, _ = _three_iteration_run()
        seqs.append(rt.on_process_end(reg, 5))
    assert seqs[0] == seqs[1]


def test_fsm_transitions():
    rt = RuntimeState()
    rt.on_send()  # banner before any receive
    assert rt.phase is Phase.FRESH and rt.current_iter_no == 0
    rt.on_receive()
    assert rt.phase is Phase.RECEIVING and rt.current_iter_no == 0
    rt.on_receive()
    assert rt.phase is Phase.RECEIVING
    rt.on_send()
    assert rt.phase is Phase.SENDING and rt.current_iter_no == 1
    rt.on_send()
    assert rt.current_iter_no == 1
    rt.on_receive()
    assert rt.phase is Phase.RECEIVING


def test_allocation_tracking_rules():
    rt = RuntimeState()
    area = bytearray(b"\xff" * 256)
    rt.on_allocate(0x10, 256, area)
    assert area == bytes(256)  # zero-initialised
    rec = rt.alloc_records_map[0x10]
    assert (rec.iter_no_init, rec.iter_no_end, rec.addr, rec.size) == (0, -1, 0x10, 256)
    rt.on_allocate(0x20, 0)
    assert 0x20 in rt.alloc_records_map
    rt.on_allocate(0x30, 64, kind="stack")
    rt.on_allocate(0x40, 65, kind="stack")
    assert 0x30 not in rt.alloc_records_map and 0x40 in rt.alloc_records_map
    for _ in range(2):
        rt.on_receive()
        rt.on_send()
    rt.on_allocate(0x50, 100)
    assert 0x50 not in rt.alloc_records_map


def test_duplicate_allocation_replaces(caplog):
    rt = RuntimeState()
    rt.on_allocate(0x10, 8)
    with caplog.at_level(logging.WARNING):
        rt.on_allocate(0x10, 16)
    assert rt.alloc_records_map[0x10].size == 16
    assert "twice" in caplog.text


def test_free_records_iteration():
    rt = RuntimeState()
    rt.on_allocate(0x10, 100)
    rec = rt.alloc_records_map[0x10]
    for _ in range(3):
        rt.on_receive()
        rt.on_send()
    rt.on_free(0x10)
    assert rec.iter_no_end == 3 and 0x10 not in rt.alloc_records_map
    rt.on_free(0x10)  # double free
    rt.on_free(0x999)  # never tracked
    assert rec.iter_no_end == 3


def test_dump_sizes_and_empty_iteration():
    rt = RuntimeState()
    rt.on_allocate(0x10, 64)
    rt.on_receive()
    rt.on_send()
    assert [len(d.contents) for d in rt.alloc_dumps_queue] == [64]
    rt2 = RuntimeState()
    rt2.on_receive()
    rt2.on_send()
    assert rt2.alloc_dumps_queue == []
    assert rt2.on_process_end(StateRegistry(), 5) == [0]


def test_dump_queue_layout():
    rt, _ = _three_iteration_run()
    assert [d.iteration for d in rt.alloc_dumps_queue] == [1, 1, 2, 2, 3, 3]
    assert [d.record.addr for d in rt.alloc_dumps_queue] == [0x100, 0x200, 0x100, 0x201, 0x100, 0x202]
    assert rt.alloc_dumps_queue[0].record.iter_no_end == 3


def test_only_long_lived_dumps_hash():
    rt, _ = _three_iteration_run()
    reg = StateRegistry()
    seq = rt.on_process_end(reg, 0)
    assert len(seq) == 3 == rt.total_iterations
    q = rt.alloc_dumps_queue
    expected = [tlsh.hash_bytes(q[i].contents) for i in (0, 2, 4)]
    assert rt.digests == expected


def test_same_contents_same_state():
    rt = RuntimeState()
    area = rt.on_allocate(0x10, 100)
    for v in (1, 1, 2):
        rt.on_receive()
        area[0] = v
        rt.on_send()
    seq = rt.on_process_end(StateRegistry(), 0)
    assert seq[0] == seq[1] != seq[2]


def test_freed_mid_run_is_skipped():
    rt = RuntimeState()
    rt.on_allocate(0x10, 100)
    rt.on_allocate(0x20, 100)
    for it in range(3):
        rt.on_receive()
        rt.on_send()
        if it == 0:
            rt.on_free(0x20)
    rt.on_process_end(StateRegistry(), 0)
    assert rt.alloc_records_map.get(0x20) is None
    only_first = [tlsh.hash_bytes(bytes(100))] * 3
    assert rt.digests == only_first


def test_zero_iterations():
    rt = RuntimeState()
    rt.on_allocate(0x10, 100)
    assert rt.on_process_end(StateRegistry(), 5) == []


def test_padding_short_streams(tmp_path):
    rt = RuntimeState(spool=True)
    area = rt.on_allocate(0x10, 8)
    rt.on_receive()
    area[:3] = b"abc"
    rt.on_send()
    rt.on_process_end(StateRegistry(), 5)
    assert rt.iteration_bytes == [b"abc" + bytes(47)]
    assert rt.digests[0] == tlsh.hash_bytes(rt.iteration_bytes[0])
    path = tmp_path / "trace.json"
    rt.write_state_trace(path, 7)
    assert json.loads(path.read_text()) == {"input_id": 7, "states": [1]}


def test_snapshots_off_skips_dumps():
    rt = RuntimeState(snapshots=False)
    rt.on_allocate(0x10, 100)
    rt.on_receive()
    rt.on_send()
    assert rt.alloc_dumps_queue == [] and rt.current_iter_no == 1
