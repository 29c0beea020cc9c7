"""Run configuration.

Configs are plain dataclasses grouped by subsystem.  A flat ``key = value``
file (and ``DUMBOLAB_`` environment variables) map onto them through the
dotted key names, e.g. ``pm.flush_latency_ns`` or ``htm.read_lines``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "DUMBOLAB_"

ENGINES = ("dumbo-si", "dumbo-opa", "spht", "naive-combo", "htm-sgl")


@dataclass
class PmConfig:
    line_size: int = 128
    flush_latency_ns: int = 310
    heap_mb: float = 128
    log_mb: float = 128
    marker_slots: int = 1024


@dataclass
class HtmConfig:
    read_lines: int = 4096
    write_lines: int = 64
    smt_halved: bool = False
    max_retries: int = 10
    # "requester" or "responder"
    victim_policy: str = "requester"
    suspend_cost_ns_1t: int = 350
    suspend_cost_ns_64t: int = 1500

    def capacities(self) -> tuple[int, int]:
        if self.smt_halved:
            return max(1, self.read_lines // 2), max(1, self.write_lines // 2)
        return self.read_lines, self.write_lines

    def suspend_cost(self, threads: int) -> int:
        """Cost of one suspend+resume pair, interpolated over 1..64 threads."""
        t = min(max(threads, 1), 64)
        lo, hi = self.suspend_cost_ns_1t, self.suspend_cost_ns_64t
        return round(lo + (hi - lo) * (t - 1) / 63)


@dataclass
class DumboConfig:
    # isolation level of the plain "dumbo" engine name
    isolation: str = "si"
    # worker count when bench.threads is 0
    threads: int = 4
    # 0 means pm.marker_slots
    marker_slots: int = 0
    # test knob: disabling it must make the checker report violations
    isolation_wait: bool = True
    # "pre_wait" stamps the non-durable state with the time taken before the
    # isolation-wait snapshot; "post_wait" stamps it after the wait.
    nondurable_ts: str = "pre_wait"


@dataclass
class SimConfig:
    tick_ns: int = 10
    access_ns: int = 2
    # bench mode yields to the scheduler every this many accessed lines
    batch_lines: int = 64
    # per-thread clock offsets (ns); empty means no skew
    skew_ns: tuple[int, ...] = ()


@dataclass
class BenchConfig:
    engine: str = "dumbo-si"
    # 0 means dumbo.threads
    threads: int = 0
    mix: str = "payment:100"
    txs_per_thread: int = 50
    scale: float = 1.0
    seed: int = 1
    warehouses: int = 8
    disjoint_warehouses: bool = False
    background_replay: bool = False


@dataclass
class Config:
    pm: PmConfig = field(default_factory=PmConfig)
    htm: HtmConfig = field(default_factory=HtmConfig)
    dumbo: DumboConfig = field(default_factory=DumboConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @property
    def marker_slots(self) -> int:
        return self.dumbo.marker_slots or self.pm.marker_slots

    @property
    def threads(self) -> int:
        return self.bench.threads or self.dumbo.threads

    def items(self):
        for section in dataclasses.fields(self):
            sub = getattr(self, section.name)
            for f in dataclasses.fields(sub):
                yield f"{section.name}.{f.name}", getattr(sub, f.name)

    def set(self, key: str, raw: Any) -> None:
        if key == "engine":
            key = "bench.engine"
        section, _, name = key.partition(".")
        sub = getattr(self, section, None)
        if sub is None or not name or not hasattr(sub, name):
            raise KeyError(f"unknown config key: {key}")
        current = getattr(sub, name)
        setattr(sub, name, _coerce(raw, current))

    def update(self, values: Mapping[str, Any]) -> "Config":
        for k, v in values.items():
            self.set(k, v)
        return self

    def copy(self) -> "Config":
        return dataclasses.replace(
            self,
            pm=dataclasses.replace(self.pm),
            htm=dataclasses.replace(self.htm),
            dumbo=dataclasses.replace(self.dumbo),
            sim=dataclasses.replace(self.sim),
            bench=dataclasses.replace(self.bench),
        )

    def dump(self) -> str:
        lines = []
        for k, v in self.items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def resolve_engine(name: str, cfg: "Config") -> str:
    """Map the bare ``dumbo`` name onto the variant picked by ``dumbo.isolation``."""
    if name == "dumbo":
        return {"si": "dumbo-si", "opacity": "dumbo-opa"}[cfg.dumbo.isolation]
    if name not in ENGINES:
        raise ValueError(f"unknown engine {name!r}; choose from {', '.join(ENGINES)} or dumbo")
    return name


def _coerce(raw: Any, current: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    """``DUMBOLAB_PM_FLUSH_LATENCY_NS=400`` -> ``{"pm.flush_latency_ns": "400"}``."""
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        if rest == "engine":
            out["bench.engine"] = value
            continue
        section, _, key = rest.partition("_")
        out[f"{section}.{key}"] = value
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        cfg.update(parse_kv(Path(path).read_text()))
    cfg.update(env_overrides(environ))
    if overrides:
        cfg.update(overrides)
    return cfg
