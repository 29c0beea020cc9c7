"""Emulated persistent memory.

Each region is a sparse map of cache lines with a volatile (cache) view and a
durable (media) view.  Writes land in the volatile view; a flush snapshots the
line and the snapshot reaches the durable view ``flush_latency_ns`` later.
Flushes from one thread pipeline: each completes at its own issue time plus
the latency.  Flush atomicity is the whole line.
"""
from __future__ import annotations

import heapq
import itertools
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from .config import PmConfig
from .sched import Clock

REGIONS = ("heap", "redo", "markers")
WORD = 8
_U64 = struct.Struct("<Q")

MAGIC = b"DUMBOPM\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQQQQII")
HEADER_SIZE = 64
assert _HEADER.size == HEADER_SIZE


class UsageError(Exception):
    """Caller broke an operation's precondition."""


@dataclass
class FlushTicket:
    seq: int
    tid: int
    region: str
    line: int
    issued_ns: int
    complete_ns: int
    data: bytes | None
    done: bool = False


@dataclass
class PmStats:
    flushes: int = 0
    clean_flushes: int = 0
    injected_ns: int = 0
    fences: int = 0
    fence_wait_ns: int = 0


@dataclass
class CrashImage:
    """Durable contents of every region at a crash."""

    regions: dict[str, dict[int, bytes]]
    line_size: int
    sizes: dict[str, int]
    threads: int
    marker_slots: int
    crash_point: str = ""
    survived: frozenset[int] = frozenset()
    # history sequence number at the crash (set by the crash sweep)
    history_seq: int | None = None

    def view(self, region: str) -> "SparseView":
        return SparseView(self.regions[region], self.line_size, self.sizes[region])


class SparseView:
    """Read-only byte view over a sparse line map (missing lines are zero)."""

    def __init__(self, lines: dict[int, bytes], line_size: int, size: int):
        self.lines = lines
        self.line_size = line_size
        self.size = size

    def read(self, off: int, n: int) -> bytes:
        ls = self.line_size
        out = bytearray()
        while n > 0:
            line, o = divmod(off, ls)
            take = min(n, ls - o)
            data = self.lines.get(line)
            out += data[o:o + take] if data is not None else bytes(take)
            off += take
            n -= take
        return bytes(out)

    def read_u64(self, off: int) -> int:
        line, o = divmod(off, self.line_size)
        data = self.lines.get(line)
        if data is None:
            return 0
        return _U64.unpack_from(data, o)[0]


class FlatView:
    """Read-only view over a contiguous buffer."""

    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.size = len(buf)

    def read(self, off: int, n: int) -> bytes:
        return bytes(self.buf[off:off + n])

    def read_u64(self, off: int) -> int:
        return _U64.unpack_from(self.buf, off)[0]


def region_sizes(cfg: PmConfig, threads: int, marker_slots: int | None = None) -> dict[str, int]:
    ls = cfg.line_size
    slots = cfg.marker_slots if marker_slots is None else marker_slots

    def lines(mb: float) -> int:
        return max(1, int(mb * (1 << 20)) // ls) * ls

    redo = lines(cfg.log_mb)
    # one window per thread, line aligned
    per = (redo // max(threads, 1)) // ls * ls
    return {"heap": lines(cfg.heap_mb), "redo": per * max(threads, 1),
            "markers": (slots + 1) * ls}


class PmDevice:
    def __init__(self, cfg: PmConfig, clock: Clock, *, threads: int = 1,
                 marker_slots: int | None = None):
        if cfg.line_size % WORD or cfg.line_size <= 0:
            raise UsageError("line size must be a positive multiple of 8")
        self.cfg = cfg
        self.clock = clock
        self.line_size = cfg.line_size
        self.latency = cfg.flush_latency_ns
        self.threads = threads
        self.marker_slots = cfg.marker_slots if marker_slots is None else marker_slots
        self.sizes = region_sizes(cfg, threads, self.marker_slots)
        self.volatile: dict[str, dict[int, bytearray]] = {r: {} for r in REGIONS}
        self.durable: dict[str, dict[int, bytes]] = {r: {} for r in REGIONS}
        self.dirty: set[tuple[str, int]] = set()
        self._pending: list[tuple[int, int, FlushTicket]] = []
        self._by_thread: dict[int, list[FlushTicket]] = {}
        self._seq = itertools.count()
        self.flush_log: list[FlushTicket] = []
        self.keep_flush_log = False
        self.stats = PmStats()
        self.listeners: list[Callable[[str, int], None]] = []
        self._durts_next = 0
        self._durts_lock = threading.Lock()
        self.version = 0

    # -- addressing -----------------------------------------------------
    def _check(self, region: str, addr: int) -> None:
        size = self.sizes.get(region)
        if size is None:
            raise UsageError(f"unknown region {region!r}")
        if addr % WORD:
            raise UsageError(f"misaligned address {addr:#x}")
        if not 0 <= addr < size:
            raise UsageError(f"address {addr:#x} outside {region} [0, {size:#x})")

    def _vline(self, region: str, line: int) -> bytearray:
        lines = self.volatile[region]
        data = lines.get(line)
        if data is None:
            d = self.durable[region].get(line)
            data = bytearray(d) if d is not None else bytearray(self.line_size)
            lines[line] = data
        return data

    # -- data path --------------------------------------------------------
    def write_word(self, region: str, addr: int, value: int) -> None:
        self._check(region, addr)
        line, off = divmod(addr, self.line_size)
        _U64.pack_into(self._vline(region, line), off, value & 0xFFFFFFFFFFFFFFFF)
        self.dirty.add((region, line))

    def write_bytes(self, region: str, addr: int, data: bytes) -> None:
        """Line-contained multi-word write (used for packed records)."""
        self._check(region, addr)
        line, off = divmod(addr, self.line_size)
        if off + len(data) > self.line_size or len(data) % WORD:
            raise UsageError("record must be word sized and stay inside one line")
        self._vline(region, line)[off:off + len(data)] = data
        self.dirty.add((region, line))

    def read_word(self, region: str, addr: int, durable: bool = False) -> int:
        self._check(region, addr)
        line, off = divmod(addr, self.line_size)
        src = self.durable[region] if durable else self.volatile[region]
        data = src.get(line)
        if data is None and not durable:
            data = self.durable[region].get(line)
        return 0 if data is None else _U64.unpack_from(data, off)[0]

    def read_bytes(self, region: str, addr: int, n: int, durable: bool = False) -> bytes:
        line, off = divmod(addr, self.line_size)
        src = self.durable[region] if durable else self.volatile[region]
        data = src.get(line)
        if data is None and not durable:
            data = self.durable[region].get(line)
        return bytes(n) if data is None else bytes(data[off:off + n])

    def line_of(self, addr: int) -> int:
        return addr // self.line_size

    # -- flush / fence ----------------------------------------------------
    def flush_line_async(self, region: str, line: int, tid: int = 0) -> FlushTicket:
        if not 0 <= line < self.sizes[region] // self.line_size:
            raise UsageError(f"line {line} outside {region}")
        now = self.clock.time(tid)
        seq = next(self._seq)
        if (region, line) not in self.dirty:
            self.stats.clean_flushes += 1
            t = FlushTicket(seq, tid, region, line, now, now, None, done=True)
            return t
        self.dirty.discard((region, line))
        t = FlushTicket(seq, tid, region, line, now, now + self.latency,
                        bytes(self.volatile[region][line]))
        self.stats.flushes += 1
        self.stats.injected_ns += self.latency
        heapq.heappush(self._pending, (t.complete_ns, seq, t))
        self._by_thread.setdefault(tid, []).append(t)
        if self.keep_flush_log:
            self.flush_log.append(t)
        self._notify("flush", tid)
        return t

    def advance(self, frontier: int) -> None:
        """Complete every flush whose completion time has passed."""
        pend = self._pending
        while pend and pend[0][0] <= frontier:
            _, _, t = heapq.heappop(pend)
            self._complete(t)

    def _complete(self, t: FlushTicket) -> None:
        if t.done:
            return
        t.done = True
        self.durable[t.region][t.line] = t.data
        self.version += 1

    def in_flight(self) -> list[FlushTicket]:
        return sorted((t for _, _, t in self._pending if not t.done), key=lambda t: t.seq)

    def fence_wait(self, tid: int) -> int:
        """Virtual ns this thread must stall before its flushes are complete."""
        mine = [t for t in self._by_thread.get(tid, ()) if not t.done]
        if not mine:
            return 0
        return max(0, max(t.complete_ns for t in mine) - self.clock.time(tid))

    def drain(self, tid: int) -> None:
        """Fence: every flush issued by ``tid`` is durable afterwards."""
        self.stats.fences += 1
        mine = [t for t in self._by_thread.pop(tid, ()) if not t.done]
        if mine:
            self._notify("fence-start", tid)
            top = max(t.seq for t in mine)
            lines = {(t.region, t.line) for t in mine}
            for _, _, t in sorted(self._pending, key=lambda e: e[1]):
                if t.seq <= top and (t.tid == tid or (t.region, t.line) in lines):
                    self._complete(t)
            self._pending = [e for e in self._pending if not e[2].done]
            heapq.heapify(self._pending)
            self._notify("fence-end", tid)

    def drain_fence(self, tid: int) -> int:
        """Non-simulated fence: charge the stall to the thread clock and drain."""
        wait = self.fence_wait(tid)
        if wait:
            self.clock.advance(tid, wait)
            self.stats.fence_wait_ns += wait
        self.drain(tid)
        return wait

    def _notify(self, kind: str, tid: int) -> None:
        for fn in self.listeners:
            fn(kind, tid)

    # -- time and tickets ---------------------------------------------------
    def now(self, tid: int) -> int:
        return self.clock.now(tid)

    def next_durts(self) -> int:
        with self._durts_lock:
            v = self._durts_next
            self._durts_next = v + 1
            return v

    @property
    def durts_head(self) -> int:
        """Next value ``next_durts`` would hand out."""
        return self._durts_next

    # -- crash --------------------------------------------------------------
    def _image(self, applied: list[FlushTicket], point: str) -> CrashImage:
        regions = {r: dict(self.durable[r]) for r in REGIONS}
        for t in sorted(applied, key=lambda t: t.seq):
            regions[t.region][t.line] = t.data
        return CrashImage(regions, self.line_size, dict(self.sizes), self.threads,
                          self.marker_slots, point, frozenset(t.seq for t in applied))

    def crash(self, policy: str = "drop-all-in-flight", *, regions: tuple[str, ...] | None = None,
              point: str = "", max_in_flight: int = 16) -> Iterator[CrashImage]:
        """Durable images at this instant.

        ``drop-all-in-flight`` yields one image.  ``enumerate-subsets`` yields one
        image per subset of in-flight flushes (restricted to ``regions`` when
        given; flushes to other regions are dropped).
        """
        if policy == "drop-all-in-flight":
            yield self._image([], point)
            return
        if policy != "enumerate-subsets":
            raise UsageError(f"unknown crash policy {policy!r}")
        flights = self.in_flight()
        if regions is not None:
            flights = [t for t in flights if t.region in regions]
        k = len(flights)
        if k > max_in_flight:
            raise UsageError(f"{k} in-flight flushes exceed enumeration cap {max_in_flight}")
        for mask in range(1 << k):
            chosen = [flights[i] for i in range(k) if mask >> i & 1]
            yield self._image(chosen, point)

    def clean_image(self) -> CrashImage:
        """Image after a clean shutdown: volatile contents fully persisted."""
        regions = {r: dict(self.durable[r]) for r in REGIONS}
        for r in REGIONS:
            for line, data in self.volatile[r].items():
                regions[r][line] = bytes(data)
        return CrashImage(regions, self.line_size, dict(self.sizes), self.threads,
                          self.marker_slots, "clean")


# -- image files ---------------------------------------------------------------

def save_image(image: CrashImage, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for rid, region in enumerate(REGIONS):
        size = image.sizes[region]
        header = _HEADER.pack(MAGIC, VERSION, image.line_size, rid, image.threads, size,
                              image.sizes["heap"], image.sizes["redo"], image.sizes["markers"],
                              image.marker_slots, 0)
        with open(d / f"{region}.pm", "wb") as f:
            f.write(header)
            for line, data in sorted(image.regions[region].items()):
                if any(data):
                    f.seek(HEADER_SIZE + line * image.line_size)
                    f.write(data)
            f.truncate(HEADER_SIZE + size)


def load_image(directory: str | Path) -> CrashImage:
    d = Path(directory)
    regions: dict[str, dict[int, bytes]] = {}
    sizes: dict[str, int] = {}
    line_size = threads = slots = None
    for rid, region in enumerate(REGIONS):
        raw = (d / f"{region}.pm").read_bytes()
        if len(raw) < HEADER_SIZE:
            raise ValueError(f"{region}.pm: truncated header")
        (magic, version, ls, got_rid, th, size, _h, _r, _m, ms, _) = _HEADER.unpack_from(raw)
        if magic != MAGIC or version != VERSION or got_rid != rid:
            raise ValueError(f"{region}.pm: bad header")
        if len(raw) != HEADER_SIZE + size:
            raise ValueError(f"{region}.pm: size mismatch")
        line_size, threads, slots = ls, th, ms
        body = memoryview(raw)[HEADER_SIZE:]
        zero = bytes(ls)
        lines = {}
        for i in range(size // ls):
            chunk = body[i * ls:(i + 1) * ls]
            if chunk != zero:
                lines[i] = bytes(chunk)
        regions[region] = lines
        sizes[region] = size
    return CrashImage(regions, line_size, sizes, threads, slots, f"file:{d}")
