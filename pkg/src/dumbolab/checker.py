"""Schedule exploration and correctness oracles.

The explorer re-runs a litmus from scratch once per schedule, steering the
scheduler with a depth-first chooser until every interleaving has been seen
(or the schedule budget runs out).  The oracles work on ``History`` objects
and never look inside the engines: read-from edges come from globally unique
written values.
"""
from __future__ import annotations

import bisect
import random
from collections import Counter
from dataclasses import dataclass, field

from .config import Config
from .engine import TxProgram, World
from .history import DIRTY, INIT, History, TxRecord
from .litmus import Litmus
from .pm import CrashImage, UsageError
from .replay import (ReplayReport, full_scan_valid, heap_words, image_tail, recover, recover_scan,
                     unmarked_holes_below_last_valid)
from .sched import Dfs, Seeded

ISOLATION = {"dumbo-si": "si", "naive-combo": "si", "dumbo-opa": "opacity", "spht": "opacity",
             "htm-sgl": "opacity"}
BRUTE_FORCE_LIMIT = 8
# engines whose readers never observe writers that committed after they began
PROPERTY1_ENGINES = ("dumbo-si", "dumbo-opa", "naive-combo")


@dataclass
class Verdict:
    ok: bool | None  # None: too large to check
    level: str
    reasons: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "unchecked" if self.ok is None else ("pass" if self.ok else "fail")

    def __bool__(self) -> bool:
        return bool(self.ok)


@dataclass(frozen=True)
class P1Violation:
    reader: int
    writer: int
    addr: int


# -- helpers -----------------------------------------------------------------------

def _concurrent(a: TxRecord, b: TxRecord) -> bool:
    return a.begin < b.interval_end and b.begin < a.interval_end


def _reads_ok(rec: TxRecord, state: dict[int, int]) -> bool:
    own: dict[int, int] = {}
    for op, a, v in rec.ops:
        if op == "w":
            own[a] = v
        elif (own[a] if a in own else state.get(a, 0)) != v:
            return False
    return True


def _apply(state: dict[int, int], rec: TxRecord) -> None:
    for op, a, v in rec.ops:
        if op == "w":
            state[a] = v


# -- Property 1 ------------------------------------------------------------------------

def check_property1(history: History) -> list[P1Violation]:
    """Read-from edges between concurrent transactions (should be none)."""
    idx = history.writer_index()
    out = []
    for r in history.records:
        own: dict[int, int] = {}
        for op, a, v in r.ops:
            if op == "w":
                own[a] = v
                continue
            if own.get(a) == v:
                continue
            w = idx.get((a, v))
            if w is not None and w.txid != r.txid and _concurrent(r, w):
                out.append(P1Violation(r.txid, w.txid, a))
    return sorted(set(out), key=lambda x: (x.reader, x.writer, x.addr))


# -- isolation ----------------------------------------------------------------------

def _check_si(history: History) -> Verdict:
    """Single snapshot per transaction plus first-committer-wins.

    Loads are lazy under rollback-only transactions, so a snapshot may sit
    anywhere between a transaction's begin and its commit invocation.  A
    snapshot is admissible when every read matches it and no update that
    committed after it (and before this transaction) wrote the same address.
    """
    v = Verdict(True, "si")
    committed = history.committed()
    updates = sorted((r for r in committed if r.visible is not None), key=lambda r: r.visible)
    vis = [r.visible for r in updates]
    states = [{}]
    for r in updates:
        s = dict(states[-1])
        _apply(s, r)
        states.append(s)
    for r in committed:
        if not r.ops:
            continue
        wr = {a for op, a, _ in r.ops if op == "w"}
        k_lo = bisect.bisect_left(vis, r.begin)
        k_hi = bisect.bisect_left(vis, r.interval_end)
        ok = False
        for k in range(k_lo, k_hi + 1):
            if not _reads_ok(r, _without(states, updates, k, r)):
                continue
            if wr and any(u is not r and u.visible < (r.visible or float("inf"))
                          and wr & {a for op, a, _ in u.ops if op == "w"} for u in updates[k:]):
                continue
            ok = True
            break
        if not ok:
            v.ok = False
            v.reasons.append(f"tx {r.txid} ({r.label}) has no admissible snapshot")
    for p in check_property1(history):
        v.ok = False
        v.reasons.append(f"property 1: tx {p.reader} read addr {p.addr:#x} from concurrent tx {p.writer}")
    return v


def _without(states, updates, k, r):
    # a transaction's own commit is never part of its snapshot
    if any(u is r for u in updates[:k]):
        s = {}
        for u in updates[:k]:
            if u is not r:
                _apply(s, u)
        return s
    return states[k]


def _check_opacity(history: History) -> Verdict:
    committed = history.committed()
    if len(committed) > BRUTE_FORCE_LIMIT:
        return Verdict(None, "opacity", [f"{len(committed)} committed transactions exceed the "
                                         f"brute-force limit of {BRUTE_FORCE_LIMIT}"])
    aborted = [r for r in history.records if not r.committed and r.ops]
    n = len(committed)
    preds = [{j for j in range(n) if committed[j].ack is not None
              and committed[j].ack < committed[i].begin} for i in range(n)]
    order: list[int] = []

    def aborted_fit() -> bool:
        prefix_states = [{}]
        for i in order:
            s = dict(prefix_states[-1])
            _apply(s, committed[i])
            prefix_states.append(s)
        for a in aborted:
            need = {j for j in range(n) if committed[j].ack is not None
                    and committed[j].ack < a.begin}
            ok = False
            for k, s in enumerate(prefix_states):
                if need <= set(order[:k]) and _reads_ok(a, s):
                    ok = True
                    break
            if not ok:
                return False
        return True

    def search(state: dict[int, int], placed: set[int]) -> bool:
        if len(placed) == n:
            return aborted_fit()
        for i in range(n):
            if i in placed or not preds[i] <= placed:
                continue
            r = committed[i]
            if not _reads_ok(r, state):
                continue
            s = dict(state)
            _apply(s, r)
            order.append(i)
            placed.add(i)
            if search(s, placed):
                return True
            order.pop()
            placed.discard(i)
        return False

    if search({}, set()):
        return Verdict(True, "opacity")
    return Verdict(False, "opacity", ["no serialization respects real-time order and every read"])


def check_isolation(history: History, level: str) -> Verdict:
    if level == "si":
        return _check_si(history)
    if level == "opacity":
        return _check_opacity(history)
    raise ValueError(f"unknown isolation level {level!r}")


# -- durability -----------------------------------------------------------------------

def recover_for(engine: str, image: CrashImage) -> tuple[dict[int, int], ReplayReport]:
    if engine in ("spht", "naive-combo"):
        return recover_scan(image)
    if engine == "htm-sgl":
        return heap_words(image.view("heap")), ReplayReport()
    return recover(image)


def recovered_set(history: History, report: ReplayReport) -> tuple[list[TxRecord], list[str]]:
    by_durts = {r.durts: r for r in history.records
                if r.committed and r.kind == "update" and r.durts is not None}
    problems = []
    out = [r for d, r in by_durts.items() if d < report.start]
    for d in report.replayed:
        r = by_durts.get(d)
        if r is None:
            problems.append(f"recovered durTs {d} belongs to no committed transaction")
        else:
            out.append(r)
    return out, problems


def check_durable_consistency(history: History, image: CrashImage, recovered_heap: dict[int, int],
                              report: ReplayReport, initial: dict[int, int] | None = None) -> Verdict:
    """Recovered state must be a read-closed set containing every acknowledged transaction."""
    v = Verdict(True, "durable")
    crash = image.history_seq if image.history_seq is not None else float("inf")
    rset, problems = recovered_set(history, report)
    v.reasons += problems
    ids = {r.txid for r in rset}
    idx = history.writer_index()
    for r in rset:
        if r.visible is None or r.visible > crash:
            v.reasons.append(f"tx {r.txid} recovered but not committed at the crash")
        for w in history.read_from(r, idx):
            if w == DIRTY:
                v.reasons.append(f"recovered tx {r.txid} read a value no committed tx wrote")
            elif w != INIT and w not in ids:
                v.reasons.append(f"recovered tx {r.txid} read from tx {w}, which was lost")
    for r in history.records:
        if not r.committed or r.ack is None or r.ack > crash:
            continue
        if r.kind == "update" and r.txid not in ids:
            v.reasons.append(f"acknowledged tx {r.txid} ({r.label}) not recovered")
        elif r.kind == "ro":
            for w in history.read_from(r, idx):
                if w not in (INIT, DIRTY) and w not in ids:
                    v.reasons.append(f"acknowledged read-only tx {r.txid} read from lost tx {w}")
    expected = dict(initial or {})
    for r in sorted(rset, key=lambda r: r.durts):
        _apply(expected, r)
    expected = {a: x for a, x in expected.items() if x}
    got = {a: x for a, x in recovered_heap.items() if x}
    if expected != got:
        diff = sorted(set(expected.items()) ^ set(got.items()))[:4]
        v.reasons.append(f"recovered heap differs from replaying the recovered set: {diff}")
    v.ok = not v.reasons
    return v


def check_wait_soundness(history: History) -> list[str]:
    """Every acknowledged transaction's writers were durable before the acknowledgment."""
    durable = history.event_seqs("marker-durable")
    idx = history.writer_index()
    out = []
    for r in history.records:
        if r.ack is None:
            continue
        for w in history.read_from(r, idx):
            if w in (INIT, DIRTY):
                continue
            d = durable.get(w)
            if d is None or d > r.ack:
                out.append(f"tx {r.txid} acknowledged before tx {w} it read from was durable")
    return out


# -- ordering invariants ------------------------------------------------------------

@dataclass
class OrderingReport:
    redo_before_marker_violations: int = 0
    durts_dependency_violations: int = 0
    durts_commit_inversions: int = 0
    marker_persist_inversions: int = 0
    markers: int = 0

    def merge(self, o: "OrderingReport") -> None:
        self.redo_before_marker_violations += o.redo_before_marker_violations
        self.durts_dependency_violations += o.durts_dependency_violations
        self.durts_commit_inversions += o.durts_commit_inversions
        self.marker_persist_inversions += o.marker_persist_inversions
        self.markers += o.markers


def _inversions(seq: list[int]) -> int:
    seen: list[int] = []
    inv = 0
    for x in seq:
        pos = bisect.bisect_right(seen, x)
        inv += len(seen) - pos
        seen.insert(pos, x)
    return inv


def check_ordering(world: World) -> OrderingReport:
    eng, hist = world.engine, world.history
    rep = OrderingReport()
    rep.redo_before_marker_violations = getattr(eng, "ordering_violations", 0)
    issue = hist.event_seqs("marker-issue")
    durable = hist.event_seqs("marker-durable")
    ups = sorted((r for r in hist.committed() if r.kind == "update" and r.durts is not None
                  and r.visible is not None), key=lambda r: r.visible)
    for r in ups:
        if r.txid in issue and r.txid in durable and r.ack is not None:
            if not issue[r.txid] < durable[r.txid] < r.ack:
                rep.redo_before_marker_violations += 1
    # dependency pairs: consecutive writers of one address, and read-from edges
    by_txid = {r.txid: r for r in ups}
    last_writer: dict[int, TxRecord] = {}
    for r in ups:
        for a in {a for op, a, _ in r.ops if op == "w"}:
            prev = last_writer.get(a)
            if prev is not None and prev.durts >= r.durts:
                rep.durts_dependency_violations += 1
            last_writer[a] = r
    idx = hist.writer_index()
    for r in ups:
        for w in hist.read_from(r, idx):
            src = by_txid.get(w)
            if src is not None and src.durts >= r.durts:
                rep.durts_dependency_violations += 1
    rep.durts_commit_inversions = _inversions([r.durts for r in ups])
    persisted = sorted(getattr(eng, "persist_order", []))
    rep.markers = len(persisted)
    rep.marker_persist_inversions = _inversions([d for _, _, d in persisted])
    return rep


# -- exploration ---------------------------------------------------------------------

def explore_config(cfg: Config | None = None) -> Config:
    cfg = Config() if cfg is None else cfg.copy()
    # small retry budget keeps the state space bounded
    if cfg.htm.max_retries > 2:
        cfg.htm.max_retries = 2
    return cfg


@dataclass
class Run:
    index: int
    world: World
    prefix: list[int]
    images: list[CrashImage] = field(default_factory=list)

    @property
    def history(self) -> History:
        return self.world.history

    @property
    def flush_log(self):
        return self.world.pm.flush_log


class Exploration:
    """Iterates over every schedule of a litmus on one engine (depth first).

    After iteration, ``exhaustive`` tells whether the whole space was covered
    within ``max_schedules``.
    """

    def __init__(self, litmus: Litmus, engine: str, cfg: Config | None = None, *,
                 max_schedules: int = 20000, crash: bool = False, max_in_flight: int = 12):
        self.litmus = litmus
        self.engine = engine
        self.cfg = explore_config(cfg)
        self.max_schedules = max_schedules
        self.crash = crash
        self.max_in_flight = max_in_flight
        self.schedules = 0
        self.exhaustive = False
        self.skipped_crash_points = 0

    def build(self, chooser) -> World:
        w = World(self.cfg, self.engine, self.litmus.n_threads, explore=True, chooser=chooser,
                  keep_flush_log=True, record_htm=True)
        w.spawn_programs(self.litmus.threads)
        return w

    def __iter__(self):
        prefix: list[int] = []
        while self.schedules < self.max_schedules:
            chooser = Dfs(prefix)
            w = self.build(chooser)
            run = Run(self.schedules, w, list(prefix))
            if self.crash:
                w.pm.listeners.append(self._collector(w, run.images))
            w.run()
            self.schedules += 1
            yield run
            trail = chooser.trail
            i = len(trail) - 1
            while i >= 0 and trail[i][0] + 1 >= trail[i][1]:
                i -= 1
            if i < 0:
                self.exhaustive = True
                return
            prefix = [c for c, _ in trail[:i]] + [trail[i][0] + 1]

    def _collector(self, w: World, sink: list):
        def on_event(kind: str, tid: int) -> None:
            try:
                for img in w.pm.crash("enumerate-subsets", point=f"{kind}@{tid}",
                                      max_in_flight=self.max_in_flight):
                    img.history_seq = w.history.seq
                    sink.append(img)
            except UsageError:
                self.skipped_crash_points += 1
        return on_event


def explore_schedules(litmus: Litmus, engine: str, max_schedules: int = 20000,
                      cfg: Config | None = None, crash: bool = False) -> Exploration:
    return Exploration(litmus, engine, cfg, max_schedules=max_schedules, crash=crash)


@dataclass
class LitmusReport:
    name: str
    engine: str
    schedules: int = 0
    exhaustive: bool = False
    images: int = 0
    violations: Counter = field(default_factory=Counter)
    examples: list[str] = field(default_factory=list)
    unchecked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, detail: str) -> None:
        self.violations[kind] += 1
        if len(self.examples) < 5:
            self.examples.append(f"{kind}: {detail}")


def check_run(run: Run, engine: str, report: LitmusReport, level: str | None = None) -> None:
    h = run.history
    level = level or ISOLATION[engine]
    for p in check_property1(h) if engine in PROPERTY1_ENGINES else ():
        report.add("property1", f"schedule {run.index}: tx {p.reader} <- tx {p.writer} @ {p.addr:#x}")
    v = check_isolation(h, level)
    if v.ok is None:
        report.unchecked += 1
    elif not v.ok:
        report.add(level, f"schedule {run.index}: {'; '.join(v.reasons[:2])}")
    if engine != "htm-sgl":
        for msg in check_wait_soundness(h):
            report.add("wait-soundness", f"schedule {run.index}: {msg}")
        o = check_ordering(run.world)
        if o.redo_before_marker_violations:
            report.add("redo-before-marker", f"schedule {run.index}")
        if o.durts_dependency_violations:
            report.add("durts-order", f"schedule {run.index}")
        if engine == "spht" and o.marker_persist_inversions:
            report.add("marker-total-order", f"schedule {run.index}")
    for img in run.images:
        report.images += 1
        heap, rep = recover_for(engine, img)
        dv = check_durable_consistency(h, img, heap, rep)
        if not dv.ok:
            report.add("durable", f"schedule {run.index} {img.crash_point}: {dv.reasons[0]}")


def check_litmus(litmus: Litmus, engine: str, cfg: Config | None = None, *,
                 max_schedules: int = 20000, crash: bool = False,
                 level: str | None = None) -> LitmusReport:
    ex = Exploration(litmus, engine, cfg, max_schedules=max_schedules, crash=crash)
    rep = LitmusReport(litmus.name, engine)
    for run in ex:
        check_run(run, engine, rep, level)
        run.images.clear()
    rep.schedules = ex.schedules
    rep.exhaustive = ex.exhaustive
    return rep


# -- crash sweep over random programs -------------------------------------------------

def random_programs(threads: int, txs: int, seed: int, nvars: int = 4, ro_frac: float = 0.4,
                    line_size: int = 128) -> dict[int, list[TxProgram]]:
    """Small transactions over ``nvars`` shared words; written values are unique."""
    rng = random.Random(seed)
    counter = 0
    out = {}
    for t in range(threads):
        progs = []
        for i in range(txs):
            if rng.random() < ro_frac:
                ops = [("r", rng.randrange(nvars) * line_size) for _ in range(2)]
                progs.append(TxProgram("ro", ops, f"T{t}.{i}"))
            else:
                ops = [("r", rng.randrange(nvars) * line_size)]
                for a in rng.sample(range(nvars), rng.randint(1, 2)):
                    counter += 1
                    ops.append(("w", a * line_size, counter))
                progs.append(TxProgram("update", ops, f"T{t}.{i}"))
        out[t] = progs
    return out


@dataclass
class SweepReport:
    engine: str
    runs: int = 0
    images: int = 0
    passed: int = 0
    acked_checked: int = 0
    skipped_points: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.images > 0 and self.passed == self.images


def crash_sweep(engine: str, *, threads: int = 3, txs: int = 5, seeds=range(10),
                cfg: Config | None = None, min_images: int = 0, max_in_flight: int = 12,
                programs_seed: int | None = None) -> SweepReport:
    """Crash at every flush and fence boundary of seeded schedules; check every image."""
    rep = SweepReport(engine)
    cfg = explore_config(cfg)
    seeds = list(seeds)
    s = 0
    while s < len(seeds) or rep.images < min_images:
        seed = seeds[s] if s < len(seeds) else 1000 + s
        s += 1
        progs = random_programs(threads, txs, seed if programs_seed is None else programs_seed,
                                line_size=cfg.pm.line_size)
        w = World(cfg, engine, threads, explore=True, chooser=Seeded(seed))
        w.spawn_programs(progs)

        def on_event(kind: str, tid: int, w=w) -> None:
            try:
                images = list(w.pm.crash("enumerate-subsets", point=f"{kind}@{tid}",
                                         max_in_flight=max_in_flight))
            except UsageError:
                rep.skipped_points += 1
                return
            for img in images:
                img.history_seq = w.history.seq
                heap, rr = recover_for(engine, img)
                v = check_durable_consistency(w.history, img, heap, rr)
                rep.images += 1
                rep.acked_checked += sum(1 for r in w.history.records
                                         if r.committed and r.ack is not None)
                if v.ok:
                    rep.passed += 1
                elif len(rep.failures) < 10:
                    rep.failures.append(f"seed {seed} {img.crash_point}: {v.reasons[0]}")

        w.pm.listeners.append(on_event)
        w.run()
        rep.runs += 1
        if s > 10_000:
            break
    return rep


@dataclass
class StopRuleReport:
    threads: int
    runs: int = 0
    images: int = 0
    agree: int = 0
    max_holes: int = 0
    skipped_points: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.images > 0 and self.agree == self.images and self.max_holes <= self.threads - 1


def stop_rule_sweep(threads: int, *, txs: int = 4, seeds=range(4), marker_slots: int = 8,
                    cfg: Config | None = None, max_in_flight: int = 10,
                    min_images: int = 0) -> StopRuleReport:
    """Compare ``replay_until(n)`` with the full-scan oracle on every crash image.

    A small marker array makes tickets wrap around and exercises the
    backpressure path where a worker replays to free a slot.
    """
    rep = StopRuleReport(threads)
    cfg = explore_config(cfg)
    cfg.dumbo.marker_slots = marker_slots
    seeds = list(seeds)
    s = 0
    while s < len(seeds) or rep.images < min_images:
        seed = seeds[s] if s < len(seeds) else 1000 + s
        s += 1
        w = World(cfg, "dumbo-si", threads, explore=True, chooser=Seeded(seed))
        w.spawn_programs(random_programs(threads, txs, seed, line_size=cfg.pm.line_size))

        def on_event(kind: str, tid: int, w=w) -> None:
            try:
                images = list(w.pm.crash("enumerate-subsets", point=f"{kind}@{tid}",
                                         max_in_flight=max_in_flight))
            except UsageError:
                rep.skipped_points += 1
                return
            for img in images:
                rep.images += 1
                markers = img.view("markers")
                tail = image_tail(img)
                oracle = full_scan_valid(markers, slots=img.marker_slots, tail=tail,
                                         line_size=img.line_size)
                _, rr = recover(img, n=threads)
                holes = unmarked_holes_below_last_valid(markers, slots=img.marker_slots,
                                                        tail=tail, line_size=img.line_size)
                rep.max_holes = max(rep.max_holes, holes)
                if set(rr.replayed) == oracle:
                    rep.agree += 1
                elif len(rep.failures) < 10:
                    rep.failures.append(f"seed {seed} {img.crash_point}: replayed "
                                        f"{sorted(rr.replayed)} oracle {sorted(oracle)}")

        w.pm.listeners.append(on_event)
        w.run()
        rep.runs += 1
        if s > 10_000:
            break
    return rep
