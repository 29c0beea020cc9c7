"""Execution histories recorded by the engines and consumed by the checkers.

Every attempt of a transaction is one ``TxRecord``.  Event positions are
global sequence numbers, so "happened before" is a plain integer comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field

INIT = -1  # pseudo-transaction that wrote every initial (zero) value
DIRTY = -2  # a value no committed transaction wrote


@dataclass
class TxRecord:
    txid: int
    tid: int
    kind: str  # "ro" | "update"
    attempt: int = 0
    path: str = "htm"  # "htm" | "sgl" | "none"
    label: str = ""
    begin: int = -1
    commit_inv: int | None = None
    visible: int | None = None
    ack: int | None = None
    end: int | None = None
    status: str = "running"
    abort_code: str | None = None
    durts: int | None = None
    ops: list[tuple] = field(default_factory=list)
    begin_ns: int = 0
    ack_ns: int | None = None

    @property
    def reads(self):
        return [(a, v) for op, a, v in self.ops if op == "r"]

    @property
    def writes(self):
        return [(a, v) for op, a, v in self.ops if op == "w"]

    @property
    def committed(self) -> bool:
        # visible but not yet acknowledged still counts: its writes are out
        return self.status == "committed" or (self.status == "running" and self.visible is not None)

    @property
    def interval_end(self) -> float:
        """End of the begin..commitTx interval used for concurrency."""
        if self.commit_inv is not None:
            return self.commit_inv
        if self.end is not None:
            return self.end
        return float("inf")

    def final_writes(self) -> dict[int, int]:
        out = {}
        for op, a, v in self.ops:
            if op == "w":
                out[a] = v
        return out


class History:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.records: list[TxRecord] = []
        self.seq = 0
        # redo entries durable / marker durable / htm commit, as (seq, kind, txid, durts)
        self.events: list[tuple[int, str, int, int | None]] = []

    def tick(self) -> int:
        self.seq += 1
        return self.seq

    def begin(self, tid: int, kind: str, attempt: int = 0, path: str = "htm", label: str = "",
              now_ns: int = 0) -> TxRecord:
        r = TxRecord(len(self.records), tid, kind, attempt, path, label, begin=self.tick(),
                     begin_ns=now_ns)
        if self.enabled:
            self.records.append(r)
        return r

    def read(self, r: TxRecord, addr: int, value: int) -> None:
        if self.enabled:
            r.ops.append(("r", addr, value))

    def write(self, r: TxRecord, addr: int, value: int) -> None:
        if self.enabled:
            r.ops.append(("w", addr, value))

    def event(self, kind: str, r: TxRecord, durts: int | None = None) -> int:
        s = self.tick()
        if self.enabled:
            self.events.append((s, kind, r.txid, durts))
        return s

    # -- derived relations ------------------------------------------------
    def committed(self) -> list[TxRecord]:
        return [r for r in self.records if r.committed]

    def writer_index(self) -> dict[tuple[int, int], TxRecord]:
        """(addr, value) -> committed writer (values are globally unique)."""
        idx = {}
        for r in self.records:
            if r.committed:
                for op, a, v in r.ops:
                    if op == "w":
                        idx[(a, v)] = r
        return idx

    def read_from(self, r: TxRecord, idx=None) -> set[int]:
        """txids of committed transactions ``r`` read from.

        ``INIT`` stands for an initial (zero) value and ``DIRTY`` for a value
        no committed transaction wrote.  Reads of the transaction's own writes
        are skipped.
        """
        idx = self.writer_index() if idx is None else idx
        own: dict[int, int] = {}
        out: set[int] = set()
        for op, a, v in r.ops:
            if op == "w":
                own[a] = v
                continue
            if own.get(a) == v:
                continue
            w = idx.get((a, v))
            if w is None:
                out.add(INIT if v == 0 else DIRTY)
            elif w.txid != r.txid:
                out.add(w.txid)
        return out

    def event_seqs(self, kind: str) -> dict[int, int]:
        """txid -> sequence number of its first event of ``kind``."""
        out: dict[int, int] = {}
        for seq, k, txid, _ in self.events:
            if k == kind and txid not in out:
                out[txid] = seq
        return out
