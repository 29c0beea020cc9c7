"""Benchmark driver: run a workload on one engine and report metrics.

Runs happen on the discrete-event simulator, so throughput is commits per
*virtual* second and every number is reproducible from (config, seed).
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checker import OrderingReport, check_ordering
from .config import Config, resolve_engine
from .engine import BUCKETS, World
from .htm import AbortCode
from .pm import UsageError
from .replay import replay_until, scan_replay
from .workload import BufferView, format_mix, gen_synthetic_replay, gen_tpcc_lite, parse_mix

OVERHEAD_BUCKETS = BUCKETS[1:]
CSV_COLUMNS = (["engine", "threads", "mix", "seed", "commits", "commits_per_s"]
               + [f"abort_{c.value}" for c in AbortCode] + ["sgl_rate"]
               + [f"{b}_ns" for b in BUCKETS])


class BenchError(RuntimeError):
    pass


@dataclass
class MetricsRecord:
    engine: str
    threads: int
    mix: str
    seed: int
    commits: int = 0
    ro_commits: int = 0
    htm_attempts: int = 0
    sgl_runs: int = 0
    aborts: dict = field(default_factory=dict)
    buckets: dict = field(default_factory=dict)
    virtual_ns: int = 0
    busy_ns: int = 0
    ordering: OrderingReport = field(default_factory=OrderingReport)
    commit_samples: list = field(default_factory=list)
    ro_waits: list = field(default_factory=list)

    @property
    def commits_per_s(self) -> float:
        return self.commits / (self.virtual_ns / 1e9) if self.virtual_ns else 0.0

    def abort_rate(self, code: AbortCode | str) -> float:
        key = code.value if isinstance(code, AbortCode) else code
        return self.aborts.get(key, 0) / self.htm_attempts if self.htm_attempts else 0.0

    @property
    def capacity_abort_rate(self) -> float:
        return self.abort_rate(AbortCode.CAPACITY_READ) + self.abort_rate(AbortCode.CAPACITY_WRITE)

    @property
    def sgl_rate(self) -> float:
        return self.sgl_runs / self.commits if self.commits else 0.0

    def per_commit(self, bucket: str) -> float:
        return self.buckets[bucket] / self.commits if self.commits else 0.0

    def overhead(self, bucket: str) -> float:
        """Bucket time as a percentage of plain execution time."""
        plain = self.buckets["plainExec"]
        return 100.0 * self.buckets[bucket] / plain if plain else 0.0

    def row(self) -> dict:
        out = {"engine": self.engine, "threads": self.threads, "mix": self.mix,
               "seed": self.seed, "commits": self.commits,
               "commits_per_s": f"{self.commits_per_s:.1f}"}
        for c in AbortCode:
            out[f"abort_{c.value}"] = f"{self.abort_rate(c):.4f}"
        out["sgl_rate"] = f"{self.sgl_rate:.4f}"
        for b in BUCKETS:
            out[f"{b}_ns"] = f"{self.per_commit(b):.1f}"
        return out


def run_world(cfg: Config, engine: str | None = None, programs=None, *, chooser=None,
              history: bool = True) -> World:
    """Build a World for ``cfg`` and run the TPC-C-lite streams (or ``programs``) to the end."""
    b = cfg.bench
    try:
        engine = resolve_engine(engine or b.engine, cfg)
        threads = cfg.threads
        if programs is None:
            programs = gen_tpcc_lite(b.mix, b.scale, b.seed, threads=threads,
                                     txs_per_thread=b.txs_per_thread,
                                     heap_bytes=int(cfg.pm.heap_mb * (1 << 20)),
                                     line_size=cfg.pm.line_size, warehouses=b.warehouses,
                                     disjoint=b.disjoint_warehouses)
        w = World(cfg, engine, threads, chooser=chooser, history=history)
        w.spawn_programs(programs)
    except (ValueError, KeyError, UsageError) as e:
        raise BenchError(f"setup failed: {e}\nconfig:\n{cfg.dump()}") from e
    w.run()
    return w


def record_of(w: World, cfg: Config) -> MetricsRecord:
    m = w.metrics()
    b = cfg.bench
    return MetricsRecord(
        engine=w.engine.name or resolve_engine(b.engine, cfg), threads=w.threads,
        mix=format_mix(parse_mix(b.mix)), seed=b.seed, commits=m.commits,
        ro_commits=m.ro_commits, htm_attempts=m.htm_attempts, sgl_runs=m.sgl_runs,
        aborts=dict(m.aborts), buckets=dict(m.buckets),
        virtual_ns=max(w.clock.time(t) for t in range(w.threads)), busy_ns=m.busy_ns,
        ordering=check_ordering(w), commit_samples=list(m.commit_samples),
        ro_waits=list(m.ro_waits))


def run_benchmark(cfg: Config, engine: str | None = None) -> tuple[MetricsRecord, list[dict]]:
    """Run one configured benchmark; returns the record and its CSV row(s)."""
    w = run_world(cfg, engine)
    rec = record_of(w, cfg)
    return rec, [rec.row()]


def csv_text(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    wr.writeheader()
    for r in records:
        wr.writerow(r.row())
    return buf.getvalue()


def breakdown_rows(records: list[MetricsRecord]) -> list[tuple]:
    """(engine, threads, overhead% per bucket rounded to 0.1, total) per record."""
    out = []
    for r in records:
        parts = [round(r.overhead(b), 1) for b in OVERHEAD_BUCKETS]
        total = round(sum(r.overhead(b) for b in OVERHEAD_BUCKETS), 1)
        out.append((r.engine, r.threads, *parts, total))
    return out


def emit_report(records: list[MetricsRecord], out_dir: str | Path,
                formats: tuple[str, ...] = ("csv",)) -> list[Path]:
    """Write results.csv and, with "gnuplot", throughput and breakdown data files."""
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "results.csv"]
        paths[0].write_text(csv_text(records))
        if "gnuplot" in formats:
            by_engine: dict[str, list[MetricsRecord]] = {}
            for r in records:
                by_engine.setdefault(r.engine, []).append(r)
            lines = []
            for eng, recs in by_engine.items():
                lines.append(f"# engine {eng}\n# threads commits_per_s")
                lines += [f"{r.threads} {r.commits_per_s:.1f}"
                          for r in sorted(recs, key=lambda r: r.threads)]
                lines.append("\n")
            p = out / "throughput.dat"
            p.write_text("\n".join(lines))
            paths.append(p)
            head = "# engine threads " + " ".join(OVERHEAD_BUCKETS) + " total  (% of plainExec)"
            rows = [" ".join(str(x) for x in row) for row in breakdown_rows(records)]
            p = out / "breakdown.dat"
            p.write_text(head + "\n" + "\n".join(rows) + "\n")
            paths.append(p)
    except OSError as e:
        raise BenchError(f"cannot write report to {out}: {e}") from e
    return paths


# -- replay benchmark ------------------------------------------------------------------

@dataclass
class ReplayPoint:
    threads: int
    txs: int
    scan_reads_per_tx: float
    array_reads_per_tx: float
    scan_us_per_tx: float
    array_us_per_tx: float


def replay_bench(thread_counts=(2, 4, 8, 16), seed: int = 1, *, max_txs: int = 20_000,
                 heap_mb: float = 128, log_mb: float = 128) -> list[ReplayPoint]:
    """Replay the same synthetic prefill with the scan and the marker-array replayers.

    Cost is reported as log records read per replayed transaction (the
    deterministic measure) plus wall-clock microseconds for reference.
    """
    out = []
    for n in thread_counts:
        logs = gen_synthetic_replay(n, seed, heap_bytes=int(heap_mb * (1 << 20)),
                                    log_bytes=int(log_mb * (1 << 20)), max_txs=max_txs)
        heap = np.zeros(logs.heap_bytes // 8, dtype=np.uint64)

        def apply(addr: int, value: int) -> None:
            heap[addr >> 3] = value

        t0 = time.perf_counter()
        scan = scan_replay(BufferView(logs.scan_redo), threads=n, redo_size=logs.redo_size,
                           apply=apply)
        t1 = time.perf_counter()
        arr = replay_until(BufferView(logs.markers), BufferView(logs.redo), apply,
                           slots=logs.slots, n=n, tail=0, line_size=logs.line_size, threads=n,
                           redo_size=logs.redo_size)
        t2 = time.perf_counter()
        k = logs.txs
        out.append(ReplayPoint(n, k, scan.record_reads / k, arr.record_reads / k,
                               1e6 * (t1 - t0) / k, 1e6 * (t2 - t1) / k))
    return out


def replay_csv(points: list[ReplayPoint]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["threads", "txs", "scan_reads_per_tx", "array_reads_per_tx",
                 "scan_us_per_tx", "array_us_per_tx"])
    for p in points:
        wr.writerow([p.threads, p.txs, f"{p.scan_reads_per_tx:.3f}", f"{p.array_reads_per_tx:.3f}",
                     f"{p.scan_us_per_tx:.2f}", f"{p.array_us_per_tx:.2f}"])
    return buf.getvalue()
