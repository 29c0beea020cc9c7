"""Comparison engines: SPHT-style durability, naive SPHT+SI-HTM, plain HTM.

The SPHT path uses physical timestamps and a totally ordered durability wait:
a transaction becomes durable only after every peer with a lower (or possibly
lower) timestamp has.  Each thread owns a redo log window made of groups::

    header (GROUP_FLAG | n, ts) | n entries (addr, value)

The entries are flushed first and the header last, so a persisted header
doubles as the transaction's durability marker.
"""
from __future__ import annotations

from .engine import ACTIVE, Engine, TxProgram
from .history import TxRecord
from .htm import TxAbort, acquire_sgl, run_transaction
from .pm import UsageError
from .replay import ENTRY, ENTRY_SIZE, GROUP_FLAG, window_size
from .sched import Sleep, WaitFor

RUNNING, COMMITTED = "run", "cmt"


class HtmSglEngine(Engine):
    """Plain HTM with the single-global-lock fallback; nothing is persisted."""

    name = "htm-sgl"
    durable = False

    def run_tx(self, tid: int, prog: TxProgram):
        attempts = [0]

        def attempt():
            attempts[0] += 1
            return self._attempt(tid, prog, attempts[0] - 1)

        return (yield from run_transaction(attempt, lambda: self._sgl(tid, prog, attempts[0]),
                                           self.max_retries))

    def _attempt(self, tid: int, prog: TxProgram, attempt: int):
        yield from self.wait_sgl_free()
        t0 = self.t(tid)
        rec = None
        try:
            self.metrics[tid].htm_attempts += 1
            rec = self.history.begin(tid, prog.kind, attempt, "htm", prog.label, self.pm.now(tid))
            self.htm.begin(tid, track_loads=True)
            yield from self.run_ops(tid, rec, prog.ops, True, [])
            self.htm.commit(tid)
        except TxAbort as e:
            self.aborted(tid, rec, e, t0)
            raise
        rec.commit_inv = rec.visible = self.history.tick()
        self.metrics[tid].buckets["plainExec"] += self.t(tid) - t0
        self.ack(tid, rec)

    def _sgl(self, tid: int, prog: TxProgram, attempt: int):
        yield from acquire_sgl(self.htm, tid)
        t0 = self.t(tid)
        rec = self.history.begin(tid, prog.kind, attempt, "sgl", prog.label, self.pm.now(tid))
        yield from self.run_ops(tid, rec, prog.ops, False, [])
        rec.commit_inv = rec.visible = self.history.tick()
        self.htm.release_sgl(tid)
        self.metrics[tid].buckets["plainExec"] += self.t(tid) - t0
        self.ack(tid, rec)


class SphtEngine(Engine):
    """Fully tracked HTM transactions with SPHT's totally ordered durability."""

    name = "spht"
    # read-only transactions: "htm" (tracked, as SPHT) or "untracked" (SI-HTM style)
    ro_mode = "htm"
    update_track_loads = True
    isolation = False

    def __init__(self, world):
        super().__init__(world)
        # None (idle or durable), (RUNNING, conservative low ts), (COMMITTED, ts)
        self.slot: list = [None] * self.n
        self.window = window_size(self.pm.sizes["redo"], self.n)
        self.head = [t * self.window for t in range(self.n)]
        self.persist_order: list[tuple[int, int, int]] = []
        self.ordering_violations = 0

    # -- durability --------------------------------------------------------------
    def _blocks(self, p: int, ts: int) -> bool:
        s = self.slot[p]
        return s is not None and s[1] < ts

    def spht_durability_wait(self, tid: int, ts: int):
        """Wait until no peer holds, or may still take, a timestamp below ``ts``."""
        for p in range(self.n):
            if p == tid:
                continue
            while self._blocks(p, ts):
                yield WaitFor(lambda p=p: not self._blocks(p, ts), f"spht {p}")

    def _write_log(self, tid: int, log: list):
        """Write and flush the entries of one group; returns (group offset, tickets)."""
        pm = self.pm
        start = self.head[tid]
        end = start + ENTRY_SIZE * (len(log) + 1)
        if end > (tid + 1) * self.window:
            raise UsageError(f"thread {tid}: redo log window full")
        lines = []
        for i, (addr, value) in enumerate(log):
            off = start + ENTRY_SIZE * (i + 1)
            pm.write_bytes("redo", off, ENTRY.pack(addr, value))
            lines.append(off // pm.line_size)
        tickets = [pm.flush_line_async("redo", line, tid) for line in dict.fromkeys(lines)]
        return start, tickets

    def _persist(self, tid: int, rec: TxRecord, log: list, ts: int, t_commit: int):
        """Post-commit durability steps shared by every SPHT-style commit."""
        pm, m = self.pm, self.metrics[tid]
        start, tickets = self._write_log(tid, log)
        fence_wait = yield from self.fence(tid)
        t1 = self.t(tid)
        yield from self.spht_durability_wait(tid, ts)
        t2 = self.t(tid)
        if not all(t.done for t in tickets):
            self.ordering_violations += 1
        pm.write_bytes("redo", start, ENTRY.pack(GROUP_FLAG | len(log), ts))
        self.history.event("marker-issue", rec, ts)
        tk = pm.flush_line_async("redo", start // pm.line_size, tid)
        yield from self.fence(tid)
        seq = self.history.event("marker-durable", rec, ts)
        self.persist_order.append((tk.complete_ns, seq, ts))
        self.head[tid] = start + ENTRY_SIZE * (len(log) + 1)
        self.slot[tid] = None
        t3 = self.t(tid)
        b = m.buckets
        b["redoFlushWait"] += t1 - t_commit
        b["durabilityWait"] += t2 - t1
        b["markerFlush"] += t3 - t2
        m.commit_samples.append((0, fence_wait))

    # -- read-only -------------------------------------------------------------------
    def _run_ro_untracked(self, tid: int, prog: TxProgram):
        yield from self.wait_sgl_free()
        begin = self.pm.now(tid)
        self.state[tid] = (ACTIVE, begin)
        rec = self.history.begin(tid, "ro", 0, "none", prog.label, begin)
        t0 = self.t(tid)
        yield from self.run_ops(tid, rec, prog.ops, False, None)
        rec.commit_inv = self.history.tick()
        self.state[tid] = None
        ts = self.pm.now(tid)
        t1 = self.t(tid)
        pre = any(self._blocks(p, ts) for p in range(self.n) if p != tid)
        yield from self.spht_durability_wait(tid, ts)
        t2 = self.t(tid)
        self.ack(tid, rec)
        m = self.metrics[tid]
        m.buckets["plainExec"] += t1 - t0
        m.buckets["durabilityWait"] += t2 - t1
        m.ro_waits.append((t2 - t1, pre))

    # -- update (and tracked read-only) --------------------------------------------
    def run_tx(self, tid: int, prog: TxProgram):
        if prog.kind == "ro" and self.ro_mode == "untracked":
            yield from self._run_ro_untracked(tid, prog)
            return None
        attempts = [0]

        def attempt():
            attempts[0] += 1
            return self._attempt(tid, prog, attempts[0] - 1)

        return (yield from run_transaction(attempt, lambda: self._sgl(tid, prog, attempts[0]),
                                           self.max_retries))

    def _attempt(self, tid: int, prog: TxProgram, attempt: int):
        yield from self.wait_sgl_free()
        pm, htm = self.pm, self.htm
        ro = prog.kind == "ro"
        t0 = self.t(tid)
        rec = None
        try:
            self.metrics[tid].htm_attempts += 1
            begin = pm.now(tid)
            rec = self.history.begin(tid, prog.kind, attempt, "htm", prog.label, begin)
            if not ro:
                self.slot[tid] = (RUNNING, begin)
            if self.isolation:
                self.state[tid] = (ACTIVE, begin)
            htm.begin(tid, track_loads=ro or self.update_track_loads)
            log: list = []
            yield from self.run_ops(tid, rec, prog.ops, True, None if ro else log)
            t_iso = 0
            if self.isolation and not ro:
                htm.suspend(tid)
                rec.commit_inv = self.history.tick()
                self.state[tid] = None
                t1 = self.t(tid)
                yield from self.isolation_wait(tid)
                t_iso = self.t(tid) - t1
                yield Sleep(self.suspend_cost)
                htm.resume(tid)
            # physical timestamp read privately just before the commit
            ts = pm.now(tid)
            htm.commit(tid)
        except TxAbort as e:
            self.state[tid] = None
            if not ro:
                self.slot[tid] = None
            self.aborted(tid, rec, e, t0)
            raise
        if rec.commit_inv is None:
            rec.commit_inv = self.history.tick()
        rec.visible = self.history.event("visible", rec, ts)
        rec.durts = ts
        t_commit = self.t(tid)
        m = self.metrics[tid]
        m.buckets["plainExec"] += t_commit - t0 - t_iso
        m.buckets["isolationWait"] += t_iso
        if ro:
            pre = any(self._blocks(p, ts) for p in range(self.n) if p != tid)
            yield self.step()
            yield from self.spht_durability_wait(tid, ts)
            wait = self.t(tid) - t_commit
            m.buckets["durabilityWait"] += wait
            m.ro_waits.append((wait, pre))
        else:
            self.slot[tid] = (COMMITTED, ts)
            yield self.step()
            yield from self._persist(tid, rec, log, ts, t_commit)
        self.ack(tid, rec)

    def _sgl(self, tid: int, prog: TxProgram, attempt: int):
        pm, htm = self.pm, self.htm
        ro = prog.kind == "ro"
        yield from acquire_sgl(htm, tid)
        t0 = self.t(tid)
        begin = pm.now(tid)
        rec = self.history.begin(tid, prog.kind, attempt, "sgl", prog.label, begin)
        if not ro:
            self.slot[tid] = (RUNNING, begin)
        if self.isolation:
            yield from self.wait_peers_inactive(tid)
        log: list = []
        yield from self.run_ops(tid, rec, prog.ops, False, None if ro else log)
        ts = pm.now(tid)
        rec.commit_inv = self.history.tick()
        rec.visible = self.history.event("visible", rec, ts)
        rec.durts = ts
        if not ro:
            self.slot[tid] = (COMMITTED, ts)
        htm.release_sgl(tid)
        t_commit = self.t(tid)
        m = self.metrics[tid]
        m.buckets["plainExec"] += t_commit - t0
        if ro:
            yield from self.spht_durability_wait(tid, ts)
            m.buckets["durabilityWait"] += self.t(tid) - t_commit
        else:
            yield from self._persist(tid, rec, log, ts, t_commit)
        self.ack(tid, rec)


class NaiveComboEngine(SphtEngine):
    """SI-HTM's isolation wait bolted in front of SPHT's commit, unchanged otherwise."""

    name = "naive-combo"
    ro_mode = "untracked"
    update_track_loads = False
    isolation = True
