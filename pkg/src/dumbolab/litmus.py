"""Litmus programs: tiny multi-threaded transaction sets for exhaustive exploration.

File format (``.lit``), one thread program per ``T<i>:`` line::

    name: nonrepeatable-read
    # comments are ignored
    T0: beginRO; read x; read x; commit
    T1: beginUpd; write x 1; commit

A thread line may hold several transactions, each closed by ``commit``.
Every variable lives on its own cache line.  Written values must be nonzero
and distinct across the whole litmus so read-from edges are unambiguous.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .engine import TxProgram

_THREAD = re.compile(r"^T(\d+)\s*:\s*(.*)$")


class LitmusError(ValueError):
    pass


@dataclass
class Litmus:
    name: str
    threads: dict[int, list[TxProgram]]
    addrs: dict[str, int]
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def n_threads(self) -> int:
        return max(self.threads) + 1 if self.threads else 0

    def max_steps(self) -> int:
        """Largest number of shared-memory accesses in one thread."""
        return max((sum(len(p.ops) for p in progs) for progs in self.threads.values()), default=0)

    def var(self, addr: int) -> str:
        for k, v in self.addrs.items():
            if v == addr:
                return k
        return hex(addr)


def parse_litmus(text: str, line_size: int = 128, name: str = "") -> Litmus:
    threads: dict[int, list[TxProgram]] = {}
    addrs: dict[str, int] = {}
    meta: dict[str, str] = {}
    values: set[int] = set()

    def addr(var: str) -> int:
        if var not in addrs:
            addrs[var] = len(addrs) * line_size
        return addrs[var]

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _THREAD.match(line)
        if m is None:
            key, sep, value = line.partition(":")
            if not sep:
                raise LitmusError(f"line {lineno}: expected 'T<n>: ...' or 'key: value'")
            meta[key.strip()] = value.strip()
            continue
        tid = int(m.group(1))
        if tid in threads:
            raise LitmusError(f"line {lineno}: thread T{tid} defined twice")
        progs: list[TxProgram] = []
        cur: TxProgram | None = None
        for stmt in (s.strip() for s in m.group(2).split(";")):
            if not stmt:
                continue
            words = stmt.split()
            op = words[0]
            if op in ("beginRO", "beginUpd"):
                if cur is not None:
                    raise LitmusError(f"line {lineno}: nested begin")
                cur = TxProgram("ro" if op == "beginRO" else "update", [], f"T{tid}.{len(progs)}")
            elif op == "commit":
                if cur is None:
                    raise LitmusError(f"line {lineno}: commit outside a transaction")
                progs.append(cur)
                cur = None
            elif op == "read" and len(words) == 2:
                if cur is None:
                    raise LitmusError(f"line {lineno}: read outside a transaction")
                cur.ops.append(("r", addr(words[1])))
            elif op == "write" and len(words) == 3:
                if cur is None:
                    raise LitmusError(f"line {lineno}: write outside a transaction")
                if cur.kind == "ro":
                    raise LitmusError(f"line {lineno}: write inside beginRO")
                v = int(words[2], 0)
                if v == 0 or v in values:
                    raise LitmusError(f"line {lineno}: written values must be nonzero and distinct")
                values.add(v)
                cur.ops.append(("w", addr(words[1]), v))
            else:
                raise LitmusError(f"line {lineno}: cannot parse {stmt!r}")
        if cur is not None:
            raise LitmusError(f"line {lineno}: transaction not committed")
        threads[tid] = progs
    if not threads:
        raise LitmusError("no thread programs")
    if sorted(threads) != list(range(len(threads))):
        raise LitmusError("threads must be numbered T0..Tn-1")
    return Litmus(meta.get("name", name), threads, addrs, meta)


def load_litmus(path: str | Path, line_size: int = 128) -> Litmus:
    p = Path(path)
    return parse_litmus(p.read_text(), line_size, name=p.stem)


def load_corpus(directory: str | Path | None = None, line_size: int = 128) -> list[Litmus]:
    """All ``.lit`` files in ``directory`` (the bundled corpus by default)."""
    if directory is None:
        root = resources.files("dumbolab") / "corpus"
        files = sorted((f for f in root.iterdir() if f.name.endswith(".lit")), key=lambda f: f.name)
        return [parse_litmus(f.read_text(), line_size, name=f.name[:-4]) for f in files]
    files = sorted(Path(directory).glob("*.lit"))
    return [load_litmus(f, line_size) for f in files]
