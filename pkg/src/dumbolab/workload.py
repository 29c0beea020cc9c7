"""Workload generators: TPC-C-lite footprints and the synthetic replay prefill.

TPC-C-lite keeps only what drives the engines: how many words each
transaction type reads and writes, and where.  The heap is split into
warehouse regions; each region starts with a few hot district rows followed
by table rows.  A row is one cache line and a scan reads ``READ_WORDS_PER_ROW``
words of it, so a read footprint of N words touches about N/2 lines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import TxProgram
from .replay import COMMIT, ENTRY, GROUP_FLAG, MARKER, Marker, slot_offset, window_size

# mean (reads, writes) in words per transaction type
FOOTPRINTS = {
    "stocklevel": (122_000, 0),
    "orderstatus": (650, 0),
    "delivery": (86_000, 30),
    "payment": (97, 5),
    "neworder": (7_500, 141),
}
RO_TYPES = ("stocklevel", "orderstatus")

MIXES = {
    # 85% RO split evenly, the rest spread over the update types
    "read-dominated": {"stocklevel": 42.5, "orderstatus": 42.5, "delivery": 5, "payment": 5,
                       "neworder": 5},
    "standard": {"neworder": 45, "payment": 43, "orderstatus": 4, "delivery": 4, "stocklevel": 4},
}

READ_WORDS_PER_ROW = 2
DISTRICTS = 10


def lognormal_sigma(p99_over_mean: float = 3.0) -> float:
    """Sigma of a log-normal whose 99th percentile is ``p99_over_mean`` times its mean."""
    z = 2.3263478740408408  # standard normal 0.99 quantile
    # exp(z*s - s^2/2) = ratio  ->  s^2/2 - z*s + ln(ratio) = 0, smaller root
    return z - math.sqrt(z * z - 2 * math.log(p99_over_mean))


SIGMA = lognormal_sigma()


@dataclass
class FootprintModel:
    tx_type: str
    mean_reads: float
    mean_writes: float
    scale: float = 1.0

    @classmethod
    def for_type(cls, tx_type: str, scale: float = 1.0) -> "FootprintModel":
        r, w = FOOTPRINTS[tx_type]
        return cls(tx_type, r, w, scale)

    @property
    def read_only(self) -> bool:
        return self.mean_writes == 0

    def _draw(self, rng: np.random.Generator, mean: float, size=None):
        mu = math.log(mean) - SIGMA * SIGMA / 2
        x = rng.lognormal(mu, SIGMA, size) * self.scale
        return np.maximum(1, np.rint(x)).astype(np.int64)

    def sample(self, rng: np.random.Generator) -> tuple[int, int]:
        reads = int(self._draw(rng, self.mean_reads)) if self.mean_reads else 0
        writes = int(self._draw(rng, self.mean_writes)) if self.mean_writes else 0
        return reads, writes

    def sample_many(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        zeros = np.zeros(n, dtype=np.int64)
        reads = self._draw(rng, self.mean_reads, n) if self.mean_reads else zeros
        writes = self._draw(rng, self.mean_writes, n) if self.mean_writes else zeros
        return reads, writes


def parse_mix(mix: str | dict) -> dict[str, float]:
    """``"payment:50,neworder:50"``, a preset name, or a dict; must sum to 100."""
    if isinstance(mix, dict):
        out = dict(mix)
    elif mix in MIXES:
        out = dict(MIXES[mix])
    else:
        out = {}
        for part in mix.split(","):
            name, sep, pct = part.strip().partition(":")
            if not sep:
                raise ValueError(f"mix entry {part!r} is not type:percent")
            out[name.strip()] = out.get(name.strip(), 0) + float(pct)
    unknown = set(out) - set(FOOTPRINTS)
    if unknown:
        raise ValueError(f"unknown transaction types {sorted(unknown)}")
    if any(v < 0 for v in out.values()) or abs(sum(out.values()) - 100) > 1e-6:
        raise ValueError(f"mix percentages must be non-negative and sum to 100, got {out}")
    return {k: v for k, v in out.items() if v > 0}


def format_mix(mix: dict[str, float]) -> str:
    return ",".join(f"{k}:{v:g}" for k, v in mix.items())


class TpccLite:
    """Per-thread transaction streams over a warehouse-sharded heap."""

    def __init__(self, mix, scale: float = 1.0, seed: int = 1, *, heap_bytes: int = 128 << 20,
                 line_size: int = 128, warehouses: int = 8, disjoint: bool = False):
        self.mix = parse_mix(mix)
        self.types = list(self.mix)
        self.p = np.array([self.mix[t] for t in self.types]) / 100.0
        self.models = {t: FootprintModel.for_type(t, scale) for t in self.types}
        self.seed = seed
        self.line_size = line_size
        self.warehouses = warehouses
        self.disjoint = disjoint
        self.region_lines = heap_bytes // line_size // warehouses
        if self.region_lines <= DISTRICTS + 1:
            raise ValueError("heap too small for the warehouse count")
        self.table_rows = self.region_lines - DISTRICTS

    def _row_addr(self, wh: int, row: int) -> int:
        return (wh * self.region_lines + DISTRICTS + row) * self.line_size

    def _scan(self, rng, wh: int, nwords: int) -> list:
        """Row-read ops covering ``nwords`` words, wrapping inside the warehouse table."""
        ops = []
        nrows, rest = divmod(nwords, READ_WORDS_PER_ROW)
        row = int(rng.integers(self.table_rows))
        while nrows > 0:
            k = min(nrows, self.table_rows - row)
            ops.append(("rr", self._row_addr(wh, row), k, READ_WORDS_PER_ROW))
            nrows -= k
            row = (row + k) % self.table_rows
        if rest:
            ops.append(("rs", self._row_addr(wh, row), rest))
        return ops

    def stream(self, tid: int, n: int) -> list[TxProgram]:
        rng = np.random.default_rng([self.seed, tid])
        kinds = rng.choice(len(self.types), size=n, p=self.p)
        seq = 0
        words_per_line = self.line_size // 8
        out = []
        for i, k in enumerate(kinds):
            t = self.types[k]
            reads, writes = self.models[t].sample(rng)
            wh = tid % self.warehouses if self.disjoint else int(rng.integers(self.warehouses))
            if writes == 0:
                out.append(TxProgram("ro", self._scan(rng, wh, reads), f"{t}#{i}"))
                continue
            # read-modify-write of a hot district word, then a scan and a contiguous update
            district = (wh * self.region_lines + int(rng.integers(DISTRICTS))) * self.line_size
            ops: list = [("r", district)]
            ops += self._scan(rng, wh, reads - 1) if reads > 1 else []
            seq += 1
            ops.append(("w", district, ((tid + 1) << 48) | seq))
            if writes > 1:
                span = writes - 1
                max_row = self.table_rows - (span + words_per_line - 1) // words_per_line
                addr = self._row_addr(wh, int(rng.integers(max(1, max_row))))
                values = [((tid + 1) << 48) | (seq + j + 1) for j in range(span)]
                seq += span
                ops.append(("ws", addr, values))
            out.append(TxProgram("update", ops, f"{t}#{i}"))
        return out


def gen_tpcc_lite(mix, scale: float = 1.0, seed: int = 1, *, threads: int = 1,
                  txs_per_thread: int = 100, **kw) -> dict[int, list[TxProgram]]:
    """Deterministic per-thread TPC-C-lite streams."""
    gen = TpccLite(mix, scale, seed, **kw)
    return {t: gen.stream(t, txs_per_thread) for t in range(threads)}


# -- synthetic replay prefill ------------------------------------------------------------

class BufferView:
    """Read-only ``read(offset, n)`` view over a bytes-like buffer."""

    def __init__(self, buf):
        self.buf = buf

    def read(self, offset: int, n: int) -> bytes:
        return bytes(self.buf[offset:offset + n])

    def read_u64(self, offset: int) -> int:
        return int.from_bytes(self.buf[offset:offset + 8], "little")


@dataclass
class SyntheticLogs:
    threads: int
    heap_bytes: int
    redo_size: int
    line_size: int
    write_counts: np.ndarray
    # marker-array format: per-thread entry windows plus one marker per transaction
    redo: bytearray
    markers: bytearray
    # scan format: per-thread groups, header first
    scan_redo: bytearray

    @property
    def txs(self) -> int:
        return len(self.write_counts)

    @property
    def slots(self) -> int:
        return self.txs


def gen_synthetic_replay(threads: int, seed: int = 1, *, heap_bytes: int = 128 << 20,
                         log_bytes: int = 128 << 20, max_txs: int | None = 20_000,
                         line_size: int = 128) -> SyntheticLogs:
    """Prefill per-thread redo logs with random transactions in both log formats.

    Write counts are uniform on 1..20 and target addresses uniform over the
    heap.  Tickets are handed out in a random interleaving of the threads.
    Generation stops when the next transaction would overflow its thread's
    window (or after ``max_txs``).
    """
    rng = np.random.default_rng([seed, threads])
    window = window_size(log_bytes, threads)
    cap_entries = window // ENTRY.size
    limit = max_txs if max_txs is not None else cap_entries * threads
    counts = rng.integers(1, 21, size=limit)
    owners = rng.integers(threads, size=limit)
    used = np.zeros(threads, dtype=np.int64)
    scan_used = np.zeros(threads, dtype=np.int64)
    redo = bytearray(log_bytes)
    scan = bytearray(log_bytes)
    markers: list[bytes] = []
    heap_words = heap_bytes // 8
    for d in range(limit):
        t, n = int(owners[d]), int(counts[d])
        if used[t] + n > cap_entries or scan_used[t] + n + 1 > cap_entries:
            counts = counts[:d]
            break
        addrs = rng.integers(heap_words, size=n, dtype=np.int64) * 8
        values = (np.int64(t + 1) << 48) | (d * 32 + np.arange(1, n + 1, dtype=np.int64))
        entries = np.empty(2 * n, dtype="<u8")
        entries[0::2] = addrs
        entries[1::2] = values
        raw = entries.tobytes()
        off = t * window + int(used[t]) * ENTRY.size
        redo[off:off + len(raw)] = raw
        markers.append(Marker(COMMIT, d, off, n).pack())
        used[t] += n
        soff = t * window + int(scan_used[t]) * ENTRY.size
        scan[soff:soff + ENTRY.size] = ENTRY.pack(GROUP_FLAG | n, d)
        scan[soff + ENTRY.size:soff + ENTRY.size + len(raw)] = raw
        scan_used[t] += n + 1
    nslots = len(counts)
    marker_region = bytearray(slot_offset(nslots, line_size))
    for d, m in enumerate(markers[:nslots]):
        off = slot_offset(d, line_size)
        marker_region[off:off + MARKER.size] = m
    return SyntheticLogs(threads, heap_bytes, log_bytes, line_size, np.asarray(counts),
                         redo, marker_region, scan)
