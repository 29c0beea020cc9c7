"""Best-effort HTM emulation over a shared word-addressed volatile heap.

Tracking is per cache line.  A transaction buffers its writes and publishes
them atomically at commit.  Conflicts are detected eagerly on every access;
the default victim policy is *requester wins*: the accessing thread proceeds
and the tracked peer is doomed.  The one exception is a tracked access that
hits a line written by a *suspended* peer, in which case the requester aborts
itself.

A doomed transaction learns about its abort at its next HTM operation.  While
suspended it keeps running non-transactionally and the abort is delivered at
resume (or commit).
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

from .config import HtmConfig
from .pm import UsageError
from .sched import WaitFor


class AbortCode(enum.Enum):
    CONFLICT = "conflict"
    CAPACITY_READ = "capacityRead"
    CAPACITY_WRITE = "capacityWrite"
    EXPLICIT = "explicit"
    SGL_PREEMPT = "sglPreempt"
    ILLEGAL = "illegalOperation"


class TxAbort(Exception):
    def __init__(self, code: AbortCode):
        super().__init__(code.value)
        self.code = code


class TxStatus(enum.Enum):
    NONE = "none"
    ACTIVE = "active"
    SUSPENDED = "suspended"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass
class TxContext:
    tid: int
    serial: int
    track_loads: bool = True
    track_stores: bool = True
    suspended: bool = False
    doomed: AbortCode | None = None
    read_set: set[int] = field(default_factory=set)
    write_set: set[int] = field(default_factory=set)
    write_buffer: dict[int, int] = field(default_factory=dict)
    pre_suspend: frozenset[int] = frozenset()
    begin_seq: int = 0
    # line -> tick of the first tracked access (recorded runs only)
    first_access: dict[int, int] = field(default_factory=dict)

    @property
    def status(self) -> TxStatus:
        if self.doomed is not None:
            return TxStatus.ABORTED
        return TxStatus.SUSPENDED if self.suspended else TxStatus.ACTIVE


@dataclass
class CommittedTx:
    tid: int
    serial: int
    begin_seq: int
    commit_seq: int
    full_tracking: bool
    read_lines: frozenset[int]
    write_lines: frozenset[int]
    first_access: dict[int, int] = field(default_factory=dict)


class Htm:
    def __init__(self, cfg: HtmConfig, *, line_size: int = 128, memory: dict[int, int] | None = None,
                 record: bool = False):
        self.cfg = cfg
        self.line_size = line_size
        self.read_cap, self.write_cap = cfg.capacities()
        self.memory: dict[int, int] = {} if memory is None else memory
        self.ctx: dict[int, TxContext] = {}
        self._writers: dict[int, int] = {}
        self._readers: dict[int, set[int]] = {}
        self.sgl_owner: int | None = None
        self.commits = 0
        self.aborts: Counter[AbortCode] = Counter()
        self.record = record
        self.committed: list[CommittedTx] = []
        self._serial = 0
        self._seq = 0

    # -- bookkeeping ------------------------------------------------------
    def _tick(self) -> int:
        self._seq += 1
        return self._seq

    def _ctx(self, tid: int) -> TxContext:
        c = self.ctx.get(tid)
        if c is None:
            raise UsageError(f"thread {tid} has no transaction")
        return c

    def status(self, tid: int) -> TxStatus:
        c = self.ctx.get(tid)
        return TxStatus.NONE if c is None else c.status

    def in_tx(self, tid: int) -> bool:
        return tid in self.ctx

    def _release(self, c: TxContext) -> None:
        for line in c.read_set:
            rs = self._readers.get(line)
            if rs is not None:
                rs.discard(c.tid)
                if not rs:
                    del self._readers[line]
        for line in c.write_set:
            if self._writers.get(line) == c.tid:
                del self._writers[line]
        c.read_set = set()
        c.write_set = set()
        c.write_buffer = {}

    def _doom(self, c: TxContext, code: AbortCode) -> None:
        if c.doomed is None:
            c.doomed = code
            self._release(c)

    def _deliver(self, c: TxContext):
        code = c.doomed
        del self.ctx[c.tid]
        self.aborts[code] += 1
        raise TxAbort(code)

    def _abort_self(self, c: TxContext, code: AbortCode):
        self._doom(c, code)
        self._deliver(c)

    def _check_live(self, c: TxContext) -> None:
        if c.doomed is not None and not c.suspended:
            self._deliver(c)

    # -- conflict resolution ------------------------------------------------
    def _resolve(self, req: int, peer: int, req_tracked: bool) -> None:
        pc = self.ctx[peer]
        if req_tracked and (self.cfg.victim_policy == "responder" or pc.suspended):
            if pc.suspended:
                # tracked sets stay armed while suspended: both sides lose
                self._doom(pc, AbortCode.CONFLICT)
            self._abort_self(self.ctx[req], AbortCode.CONFLICT)
        self._doom(pc, AbortCode.CONFLICT)

    def _on_read(self, tid: int, line: int, tracked: bool) -> None:
        holder = self._writers.get(line)
        if holder is not None and holder != tid:
            self._resolve(tid, holder, tracked)

    def _on_write(self, tid: int, line: int, tracked: bool) -> None:
        holder = self._writers.get(line)
        if holder is not None and holder != tid:
            self._resolve(tid, holder, tracked)
        readers = self._readers.get(line)
        if readers:
            for r in [r for r in readers if r != tid]:
                self._resolve(tid, r, tracked)

    # -- transactional interface ----------------------------------------------
    def begin(self, tid: int, track_loads: bool = True) -> TxContext:
        """``track_loads=False`` starts a rollback-only transaction (ROT)."""
        if tid in self.ctx:
            self._abort_self(self.ctx[tid], AbortCode.ILLEGAL)
        if self.sgl_owner is not None and self.sgl_owner != tid:
            self.aborts[AbortCode.SGL_PREEMPT] += 1
            raise TxAbort(AbortCode.SGL_PREEMPT)
        self._serial += 1
        c = TxContext(tid, self._serial, track_loads=track_loads, begin_seq=self._tick())
        self.ctx[tid] = c
        return c

    def read(self, tid: int, addr: int) -> int:
        c = self._ctx(tid)
        self._check_live(c)
        if addr in c.write_buffer:
            return c.write_buffer[addr]
        line = addr // self.line_size
        if c.doomed is not None:
            return self.memory.get(addr, 0)
        tracked = c.track_loads and not c.suspended
        self._on_read(tid, line, tracked)
        if tracked and line not in c.read_set:
            if len(c.read_set) >= self.read_cap:
                self._abort_self(c, AbortCode.CAPACITY_READ)
            c.read_set.add(line)
            self._readers.setdefault(line, set()).add(tid)
            if self.record:
                c.first_access.setdefault(line, self._tick())
        return self.memory.get(addr, 0)

    def write(self, tid: int, addr: int, value: int) -> None:
        c = self._ctx(tid)
        self._check_live(c)
        line = addr // self.line_size
        if c.suspended:
            if line in c.pre_suspend:
                self._abort_self(c, AbortCode.ILLEGAL)
            self._on_write(tid, line, False)
            self.memory[addr] = value
            return
        self._on_write(tid, line, True)
        if line not in c.write_set:
            if len(c.write_set) >= self.write_cap:
                self._abort_self(c, AbortCode.CAPACITY_WRITE)
            c.write_set.add(line)
            self._writers[line] = tid
            if self.record:
                c.first_access.setdefault(line, self._tick())
        c.write_buffer[addr] = value

    def check_flushable(self, tid: int, line: int) -> None:
        """A suspended transaction may only flush lines it never accessed."""
        c = self.ctx.get(tid)
        if c is not None and c.suspended and line in c.pre_suspend:
            self._abort_self(c, AbortCode.ILLEGAL)

    def suspend(self, tid: int) -> None:
        c = self._ctx(tid)
        self._check_live(c)
        if c.suspended:
            self._abort_self(c, AbortCode.ILLEGAL)
        c.pre_suspend = frozenset(c.read_set | c.write_set)
        c.suspended = True

    def resume(self, tid: int) -> None:
        c = self._ctx(tid)
        if not c.suspended:
            self._abort_self(c, AbortCode.ILLEGAL)
        c.suspended = False
        self._check_live(c)

    def commit(self, tid: int) -> None:
        c = self._ctx(tid)
        if c.suspended:
            self._abort_self(c, AbortCode.ILLEGAL)
        self._check_live(c)
        if self.record:
            self.committed.append(CommittedTx(
                tid, c.serial, c.begin_seq, self._tick(), c.track_loads,
                frozenset(c.read_set), frozenset(c.write_set), dict(c.first_access)))
        self.memory.update(c.write_buffer)
        self._release(c)
        del self.ctx[tid]
        self.commits += 1

    def abort(self, tid: int, code: AbortCode = AbortCode.EXPLICIT) -> None:
        self._abort_self(self._ctx(tid), code)

    # -- non-transactional accesses -------------------------------------------
    def nontx_read(self, tid: int, addr: int) -> int:
        self._on_read(tid, addr // self.line_size, False)
        return self.memory.get(addr, 0)

    def nontx_write(self, tid: int, addr: int, value: int) -> None:
        self._on_write(tid, addr // self.line_size, False)
        self.memory[addr] = value

    # -- bulk accesses (benchmarks) -------------------------------------------
    def _lines(self, addr: int, nwords: int):
        ls = self.line_size
        first = addr // ls
        last = (addr + 8 * nwords - 1) // ls
        return range(first, last + 1)

    def read_span(self, tid: int, addr: int, nwords: int, transactional: bool = True) -> int:
        """Read ``nwords`` consecutive words; tracking is applied per line."""
        self._read_lines(tid, self._lines(addr, nwords), transactional)
        return nwords

    def read_rows(self, tid: int, addr: int, nrows: int, transactional: bool = True) -> None:
        """Touch ``nrows`` consecutive lines starting at the line holding ``addr``."""
        first = addr // self.line_size
        self._read_lines(tid, range(first, first + nrows), transactional)

    def _read_lines(self, tid: int, lines, transactional: bool) -> None:
        if not transactional:
            for line in lines:
                self._on_read(tid, line, False)
            return
        c = self._ctx(tid)
        self._check_live(c)
        tracked = c.track_loads and not c.suspended
        for line in lines:
            self._on_read(tid, line, tracked)
            if tracked and line not in c.read_set:
                if len(c.read_set) >= self.read_cap:
                    self._abort_self(c, AbortCode.CAPACITY_READ)
                c.read_set.add(line)
                self._readers.setdefault(line, set()).add(tid)
                if self.record:
                    c.first_access.setdefault(line, self._tick())

    def write_span(self, tid: int, addr: int, values: list[int], transactional: bool = True) -> None:
        if not transactional:
            for line in self._lines(addr, len(values)):
                self._on_write(tid, line, False)
            for i, v in enumerate(values):
                self.memory[addr + 8 * i] = v
            return
        for i, v in enumerate(values):
            self.write(tid, addr + 8 * i, v)

    # -- single global lock ---------------------------------------------------
    def sgl_free(self) -> bool:
        return self.sgl_owner is None

    def acquire_sgl(self, tid: int) -> None:
        if self.sgl_owner is not None:
            raise UsageError("single global lock already held")
        self.sgl_owner = tid
        for c in list(self.ctx.values()):
            if c.tid != tid:
                self._doom(c, AbortCode.SGL_PREEMPT)

    def release_sgl(self, tid: int) -> None:
        if self.sgl_owner != tid:
            raise UsageError("single global lock not held by caller")
        self.sgl_owner = None


@dataclass
class Outcome:
    retries: int
    sgl: bool
    abort_codes: list[AbortCode]


def run_transaction(attempt, fallback, max_retries: int = 10, on_abort=None):
    """Retry ``attempt()`` on abort, then run ``fallback()`` under the SGL.

    Both arguments are generator factories; this is itself a generator that
    returns an ``Outcome``.
    """
    codes = []
    while len(codes) < max_retries:
        try:
            yield from attempt()
            return Outcome(len(codes), False, codes)
        except TxAbort as e:
            codes.append(e.code)
            if on_abort is not None:
                on_abort(e.code)
    yield from fallback()
    return Outcome(len(codes), True, codes)


def acquire_sgl(htm: Htm, tid: int):
    """Generator: spin until the lock is free, then take it."""
    while not htm.sgl_free():
        yield WaitFor(htm.sgl_free, "sgl")
    htm.acquire_sgl(tid)


def conflict_violations(committed: list[CommittedTx]) -> list[tuple[int, int, int]]:
    """Committed full-tracking transactions that missed a conflict.

    ``a`` is unsound when some ``b`` committed while ``a`` was running and
    wrote a line ``a`` had already accessed.  Needs a run with ``record=True``.
    Returns ``(serial_a, serial_b, line)`` triples; empty for a sound run.
    """
    out = []
    for a in committed:
        if not a.full_tracking:
            continue
        for b in committed:
            if b is a or not a.begin_seq < b.commit_seq < a.commit_seq:
                continue
            for line in b.write_lines:
                t = a.first_access.get(line)
                if t is not None and t < b.commit_seq:
                    out.append((a.serial, b.serial, line))
    return out
