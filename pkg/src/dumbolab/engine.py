"""Shared engine machinery: the simulated world, transaction programs and metrics.

An engine turns a ``TxProgram`` into a generator that the scheduler drives.
Every engine runs on the same ``World`` (clock, PM device, HTM, history), so
two engines given the same workload and chooser seed see matched schedules.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .config import Config
from .history import History, TxRecord
from .htm import Htm, TxAbort
from .pm import PmDevice
from .sched import Clock, Dfs, MinTime, Scheduler, Sleep, WaitFor

BUCKETS = ("plainExec", "isolationWait", "redoFlushWait", "durabilityWait", "markerFlush",
           "rolledBackTime")

ACTIVE = "active"


@dataclass
class TxProgram:
    """One transaction body.

    ``ops`` items: ``("r", addr)``, ``("w", addr, value)``,
    ``("rs", addr, nwords)`` (span read), ``("rr", addr, nrows, words_per_row)``
    (one access per row, one row per line) and ``("ws", addr, values)``.
    """

    kind: str  # "ro" | "update"
    ops: list = field(default_factory=list)
    label: str = ""

    @property
    def n_reads(self) -> int:
        n = 0
        for op in self.ops:
            if op[0] == "r":
                n += 1
            elif op[0] == "rs":
                n += op[2]
            elif op[0] == "rr":
                n += op[2] * op[3]
        return n

    @property
    def n_writes(self) -> int:
        return sum(1 if op[0] == "w" else len(op[2]) for op in self.ops if op[0] in ("w", "ws"))


@dataclass
class ThreadMetrics:
    commits: int = 0
    ro_commits: int = 0
    htm_attempts: int = 0
    sgl_runs: int = 0
    aborts: Counter = field(default_factory=Counter)
    buckets: dict = field(default_factory=lambda: dict.fromkeys(BUCKETS, 0))
    # per update commit: (isolation wait ns, post-commit fence wait ns)
    commit_samples: list = field(default_factory=list)
    # per RO commit: (durability wait ns, a pre-begin non-durable peer existed)
    ro_waits: list = field(default_factory=list)
    busy_ns: int = 0

    def merge(self, other: "ThreadMetrics") -> None:
        self.commits += other.commits
        self.ro_commits += other.ro_commits
        self.htm_attempts += other.htm_attempts
        self.sgl_runs += other.sgl_runs
        self.aborts.update(other.aborts)
        for b in BUCKETS:
            self.buckets[b] += other.buckets[b]
        self.commit_samples += other.commit_samples
        self.ro_waits += other.ro_waits
        self.busy_ns += other.busy_ns


class World:
    """Everything one simulated run shares."""

    def __init__(self, cfg: Config, engine: str, threads: int, *, explore: bool = False,
                 chooser=None, history: bool = True, record_htm: bool = False,
                 keep_flush_log: bool = False, background_replay: bool | None = None):
        self.cfg = cfg
        self.threads = threads
        self.explore = explore
        if background_replay is None:
            background_replay = cfg.bench.background_replay
        self.background_replay = background_replay and engine.startswith("dumbo")
        # the background replayer, when enabled, runs as thread id ``threads``
        slots = threads + (1 if self.background_replay else 0)
        self.clock = Clock(slots, cfg.sim.tick_ns, strict=explore, skew_ns=cfg.sim.skew_ns)
        self.pm = PmDevice(cfg.pm, self.clock, threads=threads, marker_slots=cfg.marker_slots)
        self.pm.keep_flush_log = keep_flush_log
        self.htm = Htm(cfg.htm, line_size=cfg.pm.line_size, record=record_htm)
        self.history = History(history)
        if chooser is None:
            chooser = Dfs() if explore else MinTime(cfg.bench.seed)
        self.sched = Scheduler(self.clock, chooser, inline_sleep=explore, hooks=[self.pm.advance])
        self.engine = make_engine(engine, self)

    def spawn_programs(self, programs: dict[int, list[TxProgram]]) -> None:
        for tid, progs in programs.items():
            self.sched.spawn(tid, self.engine.worker(tid, progs))
        if self.background_replay:
            workers = set(programs)
            done = lambda: not workers & self.sched.threads.keys()
            self.sched.spawn(self.threads, self.engine.background_replayer(self.threads, done))

    def run(self) -> None:
        self.sched.run()

    def metrics(self) -> ThreadMetrics:
        total = ThreadMetrics()
        for m in self.engine.metrics:
            total.merge(m)
        return total


class Engine:
    name = ""
    durable = True
    # True when update transactions track loads (opacity)
    track_loads = True

    def __init__(self, world: World):
        self.w = world
        self.cfg = world.cfg
        self.clock = world.clock
        self.pm = world.pm
        self.htm = world.htm
        self.history = world.history
        self.n = world.threads
        self.explore = world.explore
        self.metrics = [ThreadMetrics() for _ in range(self.n)]
        self.max_retries = self.cfg.htm.max_retries
        self.suspend_cost = self.cfg.htm.suspend_cost(self.n)
        self.access_ns = self.cfg.sim.access_ns
        self.chunk_words = self.cfg.sim.batch_lines * (self.cfg.pm.line_size // 8)
        # isolation-wait state words: None (inactive) or (ACTIVE, beginTime)
        self.state: list = [None] * self.n

    # -- driver -------------------------------------------------------------
    def worker(self, tid: int, programs: list[TxProgram]):
        start = self.clock.time(tid)
        for prog in programs:
            yield from self.run_tx(tid, prog)
        yield from self.finish(tid)
        self.metrics[tid].busy_ns = self.clock.time(tid) - start

    def finish(self, tid: int):
        yield from ()

    def run_tx(self, tid: int, prog: TxProgram):
        raise NotImplementedError

    # -- helpers ---------------------------------------------------------------
    def step(self, words: int = 1):
        """Directive closing an access step."""
        if self.explore:
            return None
        return Sleep(max(1, words) * self.access_ns)

    def t(self, tid: int) -> int:
        return self.clock.time(tid)

    def fence(self, tid: int):
        """Generator: stall until this thread's flushes complete; returns the stall."""
        wait = self.pm.fence_wait(tid)
        if wait:
            self.pm.stats.fence_wait_ns += wait
            yield Sleep(wait)
        self.pm.drain(tid)
        return wait

    def run_ops(self, tid: int, rec: TxRecord, ops, tx: bool, log: list | None):
        """Execute a body; ``tx`` selects transactional or plain accesses."""
        htm, hist = self.htm, self.history
        for op in ops:
            kind = op[0]
            if kind == "r":
                v = htm.read(tid, op[1]) if tx else htm.nontx_read(tid, op[1])
                hist.read(rec, op[1], v)
                yield self.step(1)
            elif kind == "w":
                addr, value = op[1], op[2]
                if log is not None:
                    log.append((addr, value))
                if tx:
                    htm.write(tid, addr, value)
                else:
                    htm.nontx_write(tid, addr, value)
                hist.write(rec, addr, value)
                yield self.step(1)
            elif kind == "rs":
                addr, n = op[1], op[2]
                while n > 0:
                    k = min(n, self.chunk_words)
                    htm.read_span(tid, addr, k, tx)
                    addr += 8 * k
                    n -= k
                    yield self.step(k)
            elif kind == "rr":
                addr, n, per_row = op[1], op[2], op[3]
                while n > 0:
                    k = min(n, self.cfg.sim.batch_lines)
                    htm.read_rows(tid, addr, k, tx)
                    addr += self.cfg.pm.line_size * k
                    n -= k
                    yield self.step(k * per_row)
            elif kind == "ws":
                addr, values = op[1], op[2]
                if log is not None:
                    log.extend((addr + 8 * i, v) for i, v in enumerate(values))
                htm.write_span(tid, addr, values, tx)
                for i, v in enumerate(values):
                    hist.write(rec, addr + 8 * i, v)
                yield self.step(len(values))
            else:
                raise ValueError(f"unknown op {kind!r}")

    def wait_sgl_free(self):
        while not self.htm.sgl_free():
            yield WaitFor(self.htm.sgl_free, "sgl")

    def wait_peers_inactive(self, tid: int):
        for p in range(self.n):
            if p == tid:
                continue
            while self.state[p] is not None:
                yield WaitFor(lambda p=p: self.state[p] is None, f"sgl drain {p}")

    def isolation_wait(self, tid: int):
        """Wait until every peer seen active at entry has changed its state word."""
        snap = list(self.state)
        for p, s in enumerate(snap):
            if p == tid or s is None:
                continue
            while self.state[p] == s:
                yield WaitFor(lambda p=p, s=s: self.state[p] != s, f"isolation {p}")

    def ack(self, tid: int, rec: TxRecord) -> None:
        rec.ack = self.history.tick()
        rec.end = rec.ack
        rec.ack_ns = self.t(tid)
        rec.status = "committed"
        m = self.metrics[tid]
        m.commits += 1
        if rec.kind == "ro":
            m.ro_commits += 1
        if rec.path == "sgl":
            m.sgl_runs += 1

    def aborted(self, tid: int, rec: TxRecord | None, e: TxAbort, started: int) -> None:
        m = self.metrics[tid]
        m.aborts[e.code.value] += 1
        m.buckets["rolledBackTime"] += self.t(tid) - started
        if rec is not None:
            rec.status = "aborted"
            rec.abort_code = e.code.value
            rec.end = self.history.tick()


def make_engine(name: str, world: World) -> Engine:
    from . import baselines, dumbo

    table = {
        "dumbo": lambda w: dumbo.DumboEngine(w, w.cfg.dumbo.isolation),
        "dumbo-si": lambda w: dumbo.DumboEngine(w, "si"),
        "dumbo-opa": lambda w: dumbo.DumboEngine(w, "opacity"),
        "spht": baselines.SphtEngine,
        "naive-combo": baselines.NaiveComboEngine,
        "htm-sgl": baselines.HtmSglEngine,
    }
    try:
        factory = table[name]
    except KeyError:
        raise ValueError(f"unknown engine {name!r}; choose from {sorted(table)}") from None
    return factory(world)
