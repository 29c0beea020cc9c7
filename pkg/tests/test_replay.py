import pytest
from hypothesis import given, strategies as st

from dumbolab.config import PmConfig
from dumbolab.pm import PmDevice, UsageError
from dumbolab.replay import (ABORT, COMMIT, ENTRY, GROUP_FLAG, MARKER, CorruptionError, DurMarkerArray,
                             HoleClass, Marker, RedoLogs, decode_marker, entry_offsets, full_scan_valid,
                             replay_until, scan_replay, slot_of, slot_offset,
                             unmarked_holes_below_last_valid)
from dumbolab.sched import Clock
from dumbolab.workload import BufferView

LS = 128
WINDOW = 4096


@given(st.sampled_from([0, COMMIT, ABORT]), st.integers(0, 2 ** 63), st.integers(0, 2 ** 40),
       st.integers(0, 2 ** 20))
def test_marker_roundtrip(kind, d, start, n):
    m = Marker(kind, d, start, n)
    assert len(m.pack()) == MARKER.size == 32
    assert decode_marker(m.pack()) == m


def test_slot_mapping():
    assert slot_of(0, 8) == (0, 0)
    assert slot_of(13, 8) == (5, 1)
    # line 0 holds the tail
    assert slot_offset(0, LS) == LS


def test_entry_offsets_wrap_inside_window():
    offs = entry_offsets(WINDOW + WINDOW - 16, 3, WINDOW, 4 * WINDOW)
    assert offs == [2 * WINDOW - 16, WINDOW, WINDOW + 16]
    with pytest.raises(CorruptionError):
        entry_offsets(4 * WINDOW, 1, WINDOW, 4 * WINDOW)
    with pytest.raises(CorruptionError):
        entry_offsets(0, WINDOW // 16 + 1, WINDOW, 4 * WINDOW)


class Image:
    """Hand-built marker array and one-thread log."""

    def __init__(self, slots):
        self.slots = slots
        self.markers = bytearray(slot_offset(slots, LS))
        self.logs = bytearray(WINDOW)
        self.pos = 0

    def commit(self, d, writes):
        start = self.pos
        for a, v in writes:
            self.logs[self.pos:self.pos + 16] = ENTRY.pack(a, v)
            self.pos += 16
        self._put(Marker(COMMIT, d, start, len(writes)))

    def abort(self, d):
        self._put(Marker(ABORT, d, 0, 0))

    def stale(self, d):
        # a marker left by another round of the same slot
        other = d - self.slots if d >= self.slots else d + self.slots
        self._put(Marker(COMMIT, other, 0, 0))

    def _put(self, m):
        off = slot_offset(m.durts % self.slots, LS)
        self.markers[off:off + MARKER.size] = m.pack()

    def replay(self, n, tail=0):
        heap = {}
        rep = replay_until(BufferView(self.markers), BufferView(self.logs), heap.__setitem__,
                           slots=self.slots, n=n, tail=tail, line_size=LS, threads=1,
                           redo_size=WINDOW)
        return heap, rep


def test_stop_rule_and_hole_classes():
    im = Image(16)
    im.commit(0, [(0, 1)])
    im.abort(1)
    # 2 is an unmarked hole
    im.commit(3, [(0, 3), (8, 4)])
    im.stale(4)
    im.commit(5, [(8, 5)])
    heap, rep = im.replay(n=2)
    # the second hole (4) stops the scan before 5
    assert rep.replayed == [0, 3]
    assert heap == {0: 3, 8: 4}
    assert rep.classify(1) == HoleClass.MARKED_ABORT
    assert rep.classify(2) == HoleClass.UNMARKED
    assert rep.holes_below_last_valid() == 1
    heap, rep = im.replay(n=3)
    assert rep.replayed == [0, 3, 5] and heap[8] == 5


def test_replay_needs_positive_n():
    with pytest.raises(UsageError):
        Image(4).replay(n=0)


def test_unknown_marker_kind_is_corruption():
    im = Image(4)
    im._put(Marker(7, 0, 0, 0))
    with pytest.raises(CorruptionError):
        im.replay(n=1)


states = st.lists(st.sampled_from(["commit", "abort", "empty", "stale"]), min_size=1, max_size=24)


@given(states, st.integers(1, 4), st.integers(0, 40))
def test_replay_until_matches_reference(kinds, n, tail):
    slots = 32
    im = Image(slots)
    for i, k in enumerate(kinds):
        d = tail + i
        if k == "commit":
            im.commit(d, [(8 * i, d + 1)])
        elif k == "abort":
            im.abort(d)
        elif k == "stale":
            im.stale(d)
    # reference: walk tickets, count holes, stop at the n-th
    expected, holes = [], 0
    for i, k in enumerate(kinds + ["empty"] * (n + 1)):
        if holes == n:
            break
        if k == "commit":
            expected.append(tail + i)
        elif k in ("empty", "stale"):
            holes += 1
    heap, rep = im.replay(n, tail)
    assert rep.replayed == expected
    markers = BufferView(im.markers)
    valid = full_scan_valid(markers, slots=slots, tail=tail, line_size=LS)
    assert valid == {tail + i for i, k in enumerate(kinds) if k == "commit"}
    below = unmarked_holes_below_last_valid(markers, slots=slots, tail=tail, line_size=LS)
    if below < n:
        assert set(rep.replayed) == valid


def test_scan_replay_orders_by_timestamp():
    logs = bytearray(2 * WINDOW)

    def group(t, pos, ts, writes):
        off = t * WINDOW + pos
        logs[off:off + 16] = ENTRY.pack(GROUP_FLAG | len(writes), ts)
        for i, (a, v) in enumerate(writes):
            logs[off + 16 * (i + 1):off + 16 * (i + 2)] = ENTRY.pack(a, v)
        return pos + 16 * (len(writes) + 1)

    p0 = group(0, 0, 10, [(0, 1)])
    group(0, p0, 30, [(0, 3)])
    group(1, 0, 20, [(0, 2), (8, 2)])
    heap = {}
    rep = scan_replay(BufferView(logs), threads=2, redo_size=2 * WINDOW, apply=heap.__setitem__)
    assert rep.replayed == [10, 20, 30]
    assert heap == {0: 3, 8: 2}
    # every replayed transaction re-reads both log heads
    assert rep.record_reads >= 2 * 3 + 4


def pm_device(slots=4):
    cfg = PmConfig(heap_mb=0.0625, log_mb=0.0625, marker_slots=slots)
    return PmDevice(cfg, Clock(2), threads=2)


def _drive(gen):
    for _ in gen:
        pass


def test_marker_array_slot_reuse_and_tail():
    pm = pm_device()
    logs = RedoLogs(pm, 2)
    arr = DurMarkerArray(pm, 4, logs)
    tickets = [pm.next_durts() for _ in range(4)]
    for d in tickets:
        arr.acquire_slot(0, d)
    d4 = pm.next_durts()
    assert not arr.can_acquire(d4)
    with pytest.raises(UsageError):
        arr.acquire_slot(0, d4)
    arr.publish_abort_marker(0, 0)
    assert arr.marked(0)
    with pytest.raises(UsageError):
        arr.publish_commit_marker(1, 1, 0, 0)  # not the owner
    pm.write_bytes("redo", 0, ENTRY.pack(64, 9))
    arr.publish_commit_marker(0, 1, 0, 1)
    _drive(arr.replay_one(0))
    assert arr.tail == 1
    with pytest.raises(UsageError):
        arr.advance_tail(3)  # would skip the valid commit at 1
    _drive(arr.replay_one(0))
    assert arr.tail == 2 and pm.read_word("heap", 64, durable=True) == 9
    assert pm.read_word("markers", 0, durable=True) == 2
    assert arr.can_acquire(d4)
