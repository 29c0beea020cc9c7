"""The DUMBO commit protocol over the emulated HTM and PM.

Update transactions run as hardware transactions (rollback-only under SI,
fully tracked under opacity); read-only transactions run outside HTM.  The
commit path suspends tracking, publishes the thread inactive, flushes the redo
log opportunistically, takes a logical durTs ticket, waits for isolation,
publishes itself non-durable, commits, and then becomes durable by writing its
marker to the circular marker array after a pruned durability wait.
"""
from __future__ import annotations

from .engine import ACTIVE, Engine, TxProgram
from .history import TxRecord
from .htm import TxAbort, acquire_sgl, run_transaction
from .pm import UsageError
from .replay import ENTRY, ENTRY_SIZE, DurMarkerArray, RedoLogs
from .sched import Sleep, WaitFor


class DumboEngine(Engine):
    def __init__(self, world, isolation: str = "si"):
        super().__init__(world)
        if isolation not in ("si", "opacity"):
            raise ValueError(f"unknown isolation level {isolation!r}")
        self.isolation = isolation
        self.name = "dumbo-si" if isolation == "si" else "dumbo-opa"
        self.track_loads = isolation == "opacity"
        dcfg = self.cfg.dumbo
        self.use_isolation_wait = dcfg.isolation_wait
        if dcfg.nondurable_ts not in ("pre_wait", "post_wait"):
            raise ValueError(f"unknown dumbo.nondurable_ts {dcfg.nondurable_ts!r}")
        self.post_wait_ts = dcfg.nondurable_ts == "post_wait"
        self.nondurable: list = [None] * self.n
        self.durts = [-1] * self.n
        self.pending_fence = [False] * self.n
        self.logs = RedoLogs(self.pm, self.n)
        self.markers = DurMarkerArray(self.pm, self.pm.marker_slots, self.logs)
        skew = [abs(s) for s in self.cfg.sim.skew_ns]
        self.skew_allow = 2 * max(skew) if skew else 0
        self.ordering_violations = 0
        # (completion ns, history seq, durTs) of every persisted commit marker
        self.persist_order: list[tuple[int, int, int]] = []

    # -- begin ------------------------------------------------------------------
    def _pre_begin(self, tid: int):
        # abort markers are flushed asynchronously and fenced here
        if self.pending_fence[tid]:
            yield from self.fence(tid)
            self.pending_fence[tid] = False
        yield from self.wait_sgl_free()

    def finish(self, tid: int):
        if self.pending_fence[tid]:
            yield from self.fence(tid)
            self.pending_fence[tid] = False

    def begin_tx(self, tid: int, attempt: int, label: str) -> TxRecord:
        begin = self.pm.now(tid)
        self.state[tid] = (ACTIVE, begin)
        self.durts[tid] = -1
        self.metrics[tid].htm_attempts += 1
        rec = self.history.begin(tid, "update", attempt, "htm", label, begin)
        self.htm.begin(tid, track_loads=self.track_loads)
        return rec

    def begin_tx_read_only(self, tid: int, label: str) -> TxRecord:
        begin = self.pm.now(tid)
        self.state[tid] = (ACTIVE, begin)
        return self.history.begin(tid, "ro", 0, "none", label, begin)

    # -- read-only path ------------------------------------------------------------
    def _run_ro(self, tid: int, prog: TxProgram):
        if prog.n_writes:
            raise UsageError("write inside a read-only transaction")
        yield from self._pre_begin(tid)
        rec = self.begin_tx_read_only(tid, prog.label)
        begin = self.state[tid][1]
        t0 = self.t(tid)
        yield from self.run_ops(tid, rec, prog.ops, False, None)
        rec.commit_inv = self.history.tick()
        self.state[tid] = None
        t1 = self.t(tid)
        pre = any(ts is not None and ts < begin + self.skew_allow
                  for p, ts in enumerate(self.nondurable) if p != tid)
        yield from self.pruned_durability_wait(tid, begin)
        t2 = self.t(tid)
        self.ack(tid, rec)
        m = self.metrics[tid]
        m.buckets["plainExec"] += t1 - t0
        m.buckets["durabilityWait"] += t2 - t1
        m.ro_waits.append((t2 - t1, pre))

    # -- update path -----------------------------------------------------------------
    def run_tx(self, tid: int, prog: TxProgram):
        if prog.kind == "ro":
            yield from self._run_ro(tid, prog)
            return None
        attempts = [0]

        def attempt():
            attempts[0] += 1
            return self._attempt(tid, prog, attempts[0] - 1)

        return (yield from run_transaction(attempt, lambda: self._sgl(tid, prog, attempts[0]),
                                           self.max_retries))

    def _attempt(self, tid: int, prog: TxProgram, attempt: int):
        yield from self._pre_begin(tid)
        t0 = self.t(tid)
        rec = None
        try:
            rec = self.begin_tx(tid, attempt, prog.label)
            log: list = []
            yield from self.run_ops(tid, rec, prog.ops, True, log)
            yield from self.commit_tx(tid, rec, log, t0)
        except TxAbort as e:
            self.abort_handler(tid, rec, e, t0)
            raise

    def txm_write(self, tid: int, rec: TxRecord, log: list, addr: int, value: int) -> None:
        if rec.kind == "ro":
            raise UsageError("write inside a read-only transaction")
        log.append((addr, value))
        self.htm.write(tid, addr, value)
        self.history.write(rec, addr, value)

    def commit_tx(self, tid: int, rec: TxRecord, log: list, t0: int):
        htm, pm, m = self.htm, self.pm, self.metrics[tid]
        begin = self.state[tid][1]
        htm.suspend(tid)
        pre_ts = pm.now(tid)
        rec.commit_inv = self.history.tick()
        self.state[tid] = None
        t1 = self.t(tid)
        start, tickets = yield from self.opportunistic_flush_redo(tid, log)
        d = yield from self._take_ticket(tid)
        rec.durts = d
        if self.use_isolation_wait:
            yield from self.isolation_wait(tid)
        t2 = self.t(tid)
        self.nondurable[tid] = pm.now(tid) if self.post_wait_ts else pre_ts
        yield Sleep(self.suspend_cost)
        htm.resume(tid)
        htm.commit(tid)
        rec.visible = self.history.event("visible", rec, d)
        t3 = self.t(tid)
        yield self.step()
        fence_wait = yield from self.fence(tid)
        t4 = self.t(tid)
        yield from self.pruned_durability_wait(tid, begin)
        t5 = self.t(tid)
        yield from self.flush_dur_marker(tid, rec, d, start, len(log), tickets)
        self.nondurable[tid] = None
        self.durts[tid] = -1
        t6 = self.t(tid)
        self.ack(tid, rec)
        b = m.buckets
        b["plainExec"] += (t1 - t0) + (t3 - t2)
        b["isolationWait"] += t2 - t1
        b["redoFlushWait"] += t4 - t3
        b["durabilityWait"] += t5 - t4
        b["markerFlush"] += t6 - t5
        m.commit_samples.append((t2 - t1, fence_wait))

    def _take_ticket(self, tid: int):
        d = self.pm.next_durts()
        self.durts[tid] = d
        mk = self.markers
        if not mk.can_acquire(d):
            yield from mk.replay_while(tid, lambda: not mk.can_acquire(d))
        mk.acquire_slot(tid, d)
        return d

    def opportunistic_flush_redo(self, tid: int, log: list):
        """Copy the volatile log into the PM window and start flushing it."""
        logs, pm = self.logs, self.pm
        n = len(log)
        if n > logs.capacity:
            raise UsageError(f"{n} redo entries exceed the per-thread log window")
        if logs.free(tid) < n:
            yield from self.markers.replay_while(tid, lambda: logs.free(tid) < n)
        start = logs.head[tid]
        lines = []
        for i, (addr, value) in enumerate(log):
            off = logs.offset(tid, start + i)
            pm.write_bytes("redo", off, ENTRY.pack(addr, value))
            line = off // pm.line_size
            if not lines or lines[-1] != line:
                lines.append(line)
        tickets = [pm.flush_line_async("redo", line, tid) for line in dict.fromkeys(lines)]
        return start, tickets

    def pruned_durability_wait(self, tid: int, begin: int):
        """Wait for peers that were non-durable with a timestamp before ``begin``."""
        limit = begin + self.skew_allow
        snap = list(self.nondurable)
        for p, ts in enumerate(snap):
            if p == tid or ts is None or ts >= limit:
                continue
            while self.nondurable[p] == ts:
                yield WaitFor(lambda p=p, ts=ts: self.nondurable[p] != ts, f"durability {p}")

    def flush_dur_marker(self, tid: int, rec: TxRecord, d: int, start: int, n: int, tickets):
        pm, logs = self.pm, self.logs
        if not all(t.done for t in tickets):
            self.ordering_violations += 1
        line = self.markers.publish_commit_marker(tid, d, logs.offset(tid, start), n)
        self.history.event("marker-issue", rec, d)
        tk = pm.flush_line_async("markers", line, tid)
        yield from self.fence(tid)
        rec_seq = self.history.event("marker-durable", rec, d)
        self.persist_order.append((tk.complete_ns, rec_seq, d))
        logs.head[tid] = start + n
        self.markers.log_ends[d] = (tid, start + n)

    def abort_handler(self, tid: int, rec: TxRecord | None, e: TxAbort, t0: int) -> None:
        self.state[tid] = None
        self.nondurable[tid] = None
        d = self.durts[tid]
        if d != -1:
            line = self.markers.publish_abort_marker(tid, d)
            self.pm.flush_line_async("markers", line, tid)
            self.pending_fence[tid] = True
            if rec is not None:
                self.history.event("abort-marker", rec, d)
            self.durts[tid] = -1
        self.aborted(tid, rec, e, t0)

    def background_replayer(self, rtid: int, workers_done):
        """Replays marked slots at the tail while the workers run."""
        mk, pm = self.markers, self.pm

        def ready() -> bool:
            return mk.replayer is None and mk.tail < pm.durts_head and mk.marked(mk.tail)

        while True:
            if ready():
                mk.replayer = rtid
                try:
                    yield from mk.replay_one(rtid)
                finally:
                    mk.replayer = None
                continue
            if workers_done():
                return
            yield WaitFor(lambda: ready() or workers_done(), "replayer idle")

    # -- single-global-lock path ------------------------------------------------------
    def _sgl(self, tid: int, prog: TxProgram, attempt: int):
        htm, pm, m = self.htm, self.pm, self.metrics[tid]
        if self.pending_fence[tid]:
            yield from self.fence(tid)
            self.pending_fence[tid] = False
        yield from acquire_sgl(htm, tid)
        t0 = self.t(tid)
        begin = pm.now(tid)
        rec = self.history.begin(tid, "update", attempt, "sgl", prog.label, begin)
        yield from self.wait_peers_inactive(tid)
        log: list = []
        yield from self.run_ops(tid, rec, prog.ops, False, log)
        rec.commit_inv = self.history.tick()
        rec.visible = self.history.event("visible", rec)
        t1 = self.t(tid)
        start, tickets = yield from self.opportunistic_flush_redo(tid, log)
        d = yield from self._take_ticket(tid)
        rec.durts = d
        fence_wait = yield from self.fence(tid)
        t2 = self.t(tid)
        self.nondurable[tid] = begin
        yield from self.pruned_durability_wait(tid, begin)
        t3 = self.t(tid)
        yield from self.flush_dur_marker(tid, rec, d, start, len(log), tickets)
        self.nondurable[tid] = None
        self.durts[tid] = -1
        htm.release_sgl(tid)
        t4 = self.t(tid)
        self.ack(tid, rec)
        b = m.buckets
        b["plainExec"] += t1 - t0
        b["redoFlushWait"] += t2 - t1
        b["durabilityWait"] += t3 - t2
        b["markerFlush"] += t4 - t3
        m.commit_samples.append((0, fence_wait))
