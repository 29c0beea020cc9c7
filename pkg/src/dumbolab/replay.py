"""Durability-marker array, log replay and recovery.

Layout of the ``markers`` region: line 0 holds the durable replay tail
(a durTs, u64); slot ``s`` lives at the start of line ``s + 1``.  A marker is
one 32-byte little-endian record::

    kind u8 | pad 7 | durTs u64 | logStart u64 | numEntries u64

A slot is valid for ticket ``d`` only if its durTs field equals ``d``; any
other content is empty or left over from an earlier epoch.

Redo entries are 16-byte ``(addr, value)`` records in per-thread circular
windows of the ``redo`` region.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable

from .pm import CrashImage, PmDevice, SparseView, UsageError
from .sched import Sleep, WaitFor

MARKER = struct.Struct("<B7xQQQ")
ENTRY = struct.Struct("<QQ")
ENTRY_SIZE = ENTRY.size
EMPTY, COMMIT, ABORT = 0, 1, 2
TAIL_OFFSET = 0
# header of a group in the scan-ordered (per-thread) log format
GROUP_FLAG = 1 << 63


class CorruptionError(Exception):
    pass


class HoleClass(enum.Enum):
    MARKED_ABORT = "markedAbort"
    UNMARKED = "unmarked"


@dataclass(frozen=True)
class Marker:
    kind: int
    durts: int
    log_start: int
    num_entries: int

    def pack(self) -> bytes:
        return MARKER.pack(self.kind, self.durts, self.log_start, self.num_entries)


def decode_marker(raw: bytes) -> Marker:
    return Marker(*MARKER.unpack_from(raw))


def slot_of(durts: int, slots: int) -> tuple[int, int]:
    """Ticket -> (slot, epoch)."""
    return durts % slots, durts // slots


def slot_offset(slot: int, line_size: int) -> int:
    return (slot + 1) * line_size


def window_size(redo_size: int, threads: int) -> int:
    return redo_size // max(threads, 1)


def entry_offsets(log_start: int, n: int, window: int, redo_size: int):
    """Byte offsets of ``n`` entries starting at ``log_start``, wrapping inside its window."""
    if not 0 <= log_start < redo_size or log_start % ENTRY_SIZE:
        raise CorruptionError(f"log start {log_start:#x} outside redo region")
    if n * ENTRY_SIZE > window:
        raise CorruptionError(f"{n} entries exceed the {window}-byte log window")
    base = log_start // window * window
    rel = log_start - base
    return [base + (rel + ENTRY_SIZE * i) % window for i in range(n)]


@dataclass
class ReplayReport:
    replayed: list[int] = field(default_factory=list)
    aborted: list[int] = field(default_factory=list)
    holes: list[int] = field(default_factory=list)
    start: int = 0
    stop: int = 0
    entries: int = 0
    record_reads: int = 0

    def classify(self, durts: int) -> HoleClass | None:
        if durts in self.aborted:
            return HoleClass.MARKED_ABORT
        if durts in self.holes:
            return HoleClass.UNMARKED
        return None

    def holes_below_last_valid(self) -> int:
        if not self.replayed:
            return 0
        last = max(self.replayed)
        return sum(1 for h in self.holes if h < last)


def replay_until(markers, logs, apply: Callable[[int, int], None], *, slots: int, n: int,
                 tail: int, line_size: int, threads: int, redo_size: int) -> ReplayReport:
    """Replay valid commit markers from ``tail`` upward in durTs order.

    Abort markers are skipped; scanning stops once ``n`` unmarked holes have
    been seen in this pass.
    """
    if n < 1:
        raise UsageError("stop rule needs n >= 1")
    window = window_size(redo_size, threads)
    rep = ReplayReport(start=tail)
    d = tail
    unmarked = 0
    limit = tail + slots + n
    while unmarked < n and d < limit:
        slot, _ = slot_of(d, slots)
        m = decode_marker(markers.read(slot_offset(slot, line_size), MARKER.size))
        rep.record_reads += 1
        if m.durts == d and m.kind == COMMIT:
            for off in entry_offsets(m.log_start, m.num_entries, window, redo_size):
                addr, value = ENTRY.unpack(logs.read(off, ENTRY_SIZE))
                apply(addr, value)
                rep.record_reads += 1
            rep.entries += m.num_entries
            rep.replayed.append(d)
        elif m.durts == d and m.kind == ABORT:
            rep.aborted.append(d)
        elif m.durts == d and m.kind != EMPTY:
            raise CorruptionError(f"slot {slot}: unknown marker kind {m.kind}")
        else:
            rep.holes.append(d)
            unmarked += 1
        d += 1
    rep.stop = d
    return rep


def full_scan_valid(markers, *, slots: int, tail: int, line_size: int) -> set[int]:
    """Oracle: every slot holding a commit marker for a live ticket (tail <= d < tail+M)."""
    out = set()
    for slot in range(slots):
        m = decode_marker(markers.read(slot_offset(slot, line_size), MARKER.size))
        if m.kind == COMMIT and m.durts % slots == slot and tail <= m.durts < tail + slots:
            out.add(m.durts)
    return out


def unmarked_holes_below_last_valid(markers, *, slots: int, tail: int, line_size: int) -> int:
    """Oracle: live tickets below the highest valid commit marker that carry no marker."""
    valid = full_scan_valid(markers, slots=slots, tail=tail, line_size=line_size)
    if not valid:
        return 0
    holes = 0
    for d in range(tail, max(valid)):
        slot, _ = slot_of(d, slots)
        m = decode_marker(markers.read(slot_offset(slot, line_size), MARKER.size))
        if m.durts != d or m.kind not in (COMMIT, ABORT):
            holes += 1
    return holes


def heap_words(view: SparseView) -> dict[int, int]:
    out = {}
    for line, data in view.lines.items():
        base = line * view.line_size
        for i in range(0, view.line_size, 8):
            v = int.from_bytes(data[i:i + 8], "little")
            if v:
                out[base + i] = v
    return out


def image_tail(image: CrashImage) -> int:
    return image.view("markers").read_u64(TAIL_OFFSET)


def recover(image: CrashImage, n: int | None = None) -> tuple[dict[int, int], ReplayReport]:
    """Rebuild the durable heap from a crash image (marker-array format)."""
    heap = heap_words(image.view("heap"))

    def apply(addr: int, value: int) -> None:
        if value:
            heap[addr] = value
        else:
            heap.pop(addr, None)

    rep = replay_until(image.view("markers"), image.view("redo"), apply,
                       slots=image.marker_slots, n=image.threads if n is None else n,
                       tail=image_tail(image), line_size=image.line_size,
                       threads=image.threads, redo_size=image.sizes["redo"])
    return heap, rep


# -- scan-ordered per-thread logs ---------------------------------------------------

def scan_replay(logs, *, threads: int, redo_size: int, apply: Callable[[int, int], None],
                max_txs: int | None = None) -> ReplayReport:
    """Replay per-thread logs whose groups carry their own ordering timestamp.

    After every replayed transaction the head of every thread's log is read
    again to find the smallest next timestamp.
    """
    window = window_size(redo_size, threads)
    cursor = [t * window for t in range(threads)]
    ends = [(t + 1) * window for t in range(threads)]
    rep = ReplayReport()
    while max_txs is None or len(rep.replayed) < max_txs:
        best = None
        for t in range(threads):
            if cursor[t] + ENTRY_SIZE > ends[t]:
                continue
            head, ts = ENTRY.unpack(logs.read(cursor[t], ENTRY_SIZE))
            rep.record_reads += 1
            if not head & GROUP_FLAG:
                continue
            n = head & ~GROUP_FLAG
            if cursor[t] + ENTRY_SIZE * (n + 1) > ends[t]:
                raise CorruptionError(f"thread {t}: group overruns its log window")
            if best is None or ts < best[0]:
                best = (ts, t, n)
        if best is None:
            break
        ts, t, n = best
        off = cursor[t] + ENTRY_SIZE
        for i in range(n):
            addr, value = ENTRY.unpack(logs.read(off + ENTRY_SIZE * i, ENTRY_SIZE))
            apply(addr, value)
            rep.record_reads += 1
        rep.entries += n
        rep.replayed.append(ts)
        cursor[t] = off + ENTRY_SIZE * n
    return rep


def recover_scan(image: CrashImage) -> tuple[dict[int, int], ReplayReport]:
    heap = heap_words(image.view("heap"))

    def apply(addr: int, value: int) -> None:
        if value:
            heap[addr] = value
        else:
            heap.pop(addr, None)

    rep = scan_replay(image.view("redo"), threads=image.threads,
                      redo_size=image.sizes["redo"], apply=apply)
    return heap, rep


# -- in-process marker array ----------------------------------------------------------

class RedoLogs:
    """Per-thread circular redo windows; positions are logical entry counters."""

    def __init__(self, pm: PmDevice, threads: int):
        self.pm = pm
        self.window = window_size(pm.sizes["redo"], threads)
        self.capacity = self.window // ENTRY_SIZE
        self.head = [0] * threads
        self.tail = [0] * threads

    def offset(self, tid: int, pos: int) -> int:
        return tid * self.window + (pos % self.capacity) * ENTRY_SIZE

    def free(self, tid: int) -> int:
        return self.capacity - (self.head[tid] - self.tail[tid])


class DurMarkerArray:
    def __init__(self, pm: PmDevice, slots: int, logs: RedoLogs | None = None):
        self.pm = pm
        self.slots = slots
        self.logs = logs
        self.tail = 0
        self.owners: dict[int, int] = {}
        # durts -> (tid, log end position) for reclaiming log space on replay
        self.log_ends: dict[int, tuple[int, int]] = {}
        self.replayer: int | None = None
        self.replayed_count = 0

    def _addr(self, durts: int) -> int:
        return slot_offset(durts % self.slots, self.pm.line_size)

    def line(self, durts: int) -> int:
        return self._addr(durts) // self.pm.line_size

    def can_acquire(self, durts: int) -> bool:
        return durts - self.tail < self.slots

    def acquire_slot(self, tid: int, durts: int) -> tuple[int, int]:
        if not self.can_acquire(durts):
            raise UsageError(f"slot for durTs {durts} still holds an unreplayed epoch")
        self.owners[durts] = tid
        return slot_of(durts, self.slots)

    def _publish(self, tid: int, marker: Marker) -> int:
        if self.owners.get(marker.durts) != tid:
            raise UsageError(f"thread {tid} does not own durTs {marker.durts}")
        self.pm.write_bytes("markers", self._addr(marker.durts), marker.pack())
        return self.line(marker.durts)

    def publish_commit_marker(self, tid: int, durts: int, log_start: int, num_entries: int) -> int:
        return self._publish(tid, Marker(COMMIT, durts, log_start, num_entries))

    def publish_abort_marker(self, tid: int, durts: int) -> int:
        return self._publish(tid, Marker(ABORT, durts, 0, 0))

    def read_marker(self, durts: int) -> Marker:
        return decode_marker(self.pm.read_bytes("markers", self._addr(durts), MARKER.size))

    def marked(self, durts: int) -> bool:
        m = self.read_marker(durts)
        return m.durts == durts and m.kind in (COMMIT, ABORT)

    def advance_tail(self, up_to: int) -> None:
        """Skip slots below ``up_to``; refuses to pass a valid, unreplayed commit marker."""
        if up_to > self.pm.durts_head:
            raise UsageError("tail cannot pass the ticket head")
        for d in range(self.tail, up_to):
            m = self.read_marker(d)
            if m.durts == d and m.kind == COMMIT:
                raise UsageError(f"durTs {d} has a valid marker that was not replayed")
        for d in range(self.tail, up_to):
            self.owners.pop(d, None)
        self.tail = max(self.tail, up_to)
        self.pm.write_word("markers", TAIL_OFFSET, self.tail)

    def replay_one(self, tid: int):
        """Generator: replay the slot at the tail (it must be marked) and advance."""
        d = self.tail
        m = self.read_marker(d)
        pm = self.pm
        if m.kind == COMMIT:
            window = self.logs.window if self.logs else window_size(pm.sizes["redo"], pm.threads)
            lines = set()
            for off in entry_offsets(m.log_start, m.num_entries, window, pm.sizes["redo"]):
                addr, value = ENTRY.unpack(pm.read_bytes("redo", off, ENTRY_SIZE))
                pm.write_word("heap", addr, value)
                lines.add(addr // pm.line_size)
            for line in sorted(lines):
                pm.flush_line_async("heap", line, tid)
            wait = pm.fence_wait(tid)
            if wait:
                yield Sleep(wait)
            pm.drain(tid)
        pm.write_word("markers", TAIL_OFFSET, d + 1)
        pm.flush_line_async("markers", 0, tid)
        wait = pm.fence_wait(tid)
        if wait:
            yield Sleep(wait)
        pm.drain(tid)
        self.owners.pop(d, None)
        end = self.log_ends.pop(d, None)
        if end is not None and self.logs is not None:
            t, pos = end
            self.logs.tail[t] = max(self.logs.tail[t], pos)
        self.tail = d + 1
        self.replayed_count += 1

    def replay_while(self, tid: int, needed: Callable[[], bool]):
        """Generator: synchronous replay by a worker until ``needed()`` is false."""
        while needed():
            if self.replayer is not None and self.replayer != tid:
                yield WaitFor(lambda: self.replayer is None or not needed(), "replayer busy")
                continue
            d = self.tail
            if d >= self.pm.durts_head:
                raise UsageError("backpressure with nothing to replay")
            if not self.marked(d):
                yield WaitFor(lambda d=d: self.marked(d) or not needed(), f"slot {d} unmarked")
                continue
            self.replayer = tid
            try:
                yield from self.replay_one(tid)
            finally:
                self.replayer = None
