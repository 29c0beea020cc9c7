"""End-to-end engine behaviour on small runs."""
import pytest

from dumbolab.bench import record_of, run_world
from dumbolab.checker import (PROPERTY1_ENGINES, check_isolation, check_litmus, check_ordering,
                              check_property1, recover_for, random_programs)
from dumbolab.config import ENGINES, Config
from dumbolab.engine import TxProgram
from dumbolab.htm import AbortCode
from dumbolab.litmus import load_corpus
from dumbolab.workload import FOOTPRINTS

DURABLE = [e for e in ENGINES if e != "htm-sgl"]


def small(threads=3, **kw):
    cfg = Config()
    cfg.bench.threads = threads
    cfg.pm.heap_mb = 4
    cfg.pm.log_mb = 2
    for k, v in kw.items():
        cfg.set(k, v)
    return cfg


def corpus(name):
    return next(c for c in load_corpus() if c.name == name)


@pytest.mark.parametrize("engine", ENGINES)
@pytest.mark.parametrize("seed", [1, 2])
def test_random_programs_commit_and_recover(engine, seed):
    cfg = small()
    progs = random_programs(3, 8, seed)
    w = run_world(cfg, engine, progs)
    m = w.metrics()
    assert m.commits == 24
    assert sum(1 for r in w.history.records if r.status == "committed") == 24
    assert w.history.records and all(r.status in ("committed", "aborted") for r in w.history.records)
    expected = {a: v for a, v in w.htm.memory.items() if v}
    if engine in DURABLE:
        heap, _ = recover_for(engine, w.pm.clean_image())
        assert {a: v for a, v in heap.items() if v} == expected
        o = check_ordering(w)
        assert o.redo_before_marker_violations == 0 and o.durts_dependency_violations == 0
    if engine in PROPERTY1_ENGINES:
        assert check_property1(w.history) == []


@pytest.mark.parametrize("engine", ["dumbo-si", "dumbo-opa"])
def test_dumbo_reader_never_hits_capacity(engine):
    cfg = small(threads=2)
    cfg.pm.heap_mb = 64
    words = FOOTPRINTS["stocklevel"][0]
    ro = TxProgram("ro", [("rr", 0, words // 2, 2)], "stocklevel")
    upd = TxProgram("update", [("w", 128 * 5, 7)], "w")
    w = run_world(cfg, engine, {0: [ro], 1: [upd] * 3})
    rec = record_of(w, cfg)
    assert rec.commits == 4
    assert rec.aborts.get(AbortCode.CAPACITY_READ.value, 0) == 0
    assert rec.sgl_runs == 0


def test_spht_reader_falls_back_to_sgl():
    cfg = small(threads=1)
    cfg.pm.heap_mb = 64
    ro = TxProgram("ro", [("rr", 0, FOOTPRINTS["stocklevel"][0] // 2, 2)], "stocklevel")
    rec = record_of(run_world(cfg, "spht", {0: [ro]}), cfg)
    assert rec.commits == 1 and rec.sgl_runs == 1
    assert rec.capacity_abort_rate == 1.0
    assert rec.htm_attempts == cfg.htm.max_retries


def test_htm_sgl_write_capacity_goes_to_sgl():
    cfg = small(threads=1)
    big = TxProgram("update", [("ws", 0, list(range(1, 64 * 16 + 2)))], "big")
    rec = record_of(run_world(cfg, "htm-sgl", {0: [big]}), cfg)
    assert rec.sgl_runs == 1 and rec.aborts[AbortCode.CAPACITY_WRITE.value] > 0


def test_isolation_wait_off_breaks_isolation():
    cfg = Config()
    cfg.dumbo.isolation_wait = False
    bad = sum(sum(check_litmus(lit, "dumbo-si", cfg).violations.values())
              for lit in load_corpus()[:4])
    assert bad > 0
    bad = sum(sum(check_litmus(lit, "dumbo-si").violations.values())
              for lit in load_corpus()[:4])
    assert bad == 0


def test_post_wait_timestamp_breaks_wait_soundness():
    cfg = Config()
    cfg.dumbo.nondurable_ts = "post_wait"
    rep = check_litmus(corpus("wait-then-read"), "dumbo-si", cfg)
    assert rep.violations["wait-soundness"] > 0
    assert check_litmus(corpus("wait-then-read"), "dumbo-si").ok


def test_write_skew_levels():
    lit = corpus("write-skew")
    si = check_litmus(lit, "dumbo-si")
    assert si.ok
    # the same schedules judged as opacity expose the skew
    assert not check_litmus(lit, "dumbo-si", level="opacity").ok
    assert check_litmus(lit, "dumbo-opa").ok


def test_background_replay_with_tiny_marker_array():
    cfg = small(threads=3)
    cfg.dumbo.marker_slots = 4
    cfg.bench.background_replay = True
    w = run_world(cfg, "dumbo-si", random_programs(3, 10, 4, ro_frac=0.0))
    assert w.metrics().commits == 30
    heap, rep = recover_for("dumbo-si", w.pm.clean_image())
    assert {a: v for a, v in heap.items() if v} == {a: v for a, v in w.htm.memory.items() if v}
    assert rep.start > 0  # the replayer moved the tail


def test_dumbo_ro_waits_only_for_pre_begin_peers():
    cfg = small(threads=4, **{"bench.mix": "read-dominated", "bench.scale": 0.01,
                              "bench.txs_per_thread": 30})
    rec = record_of(run_world(cfg, "dumbo-si"), cfg)
    assert rec.ro_waits
    assert all(ns == 0 for ns, peer in rec.ro_waits if not peer)


def test_run_is_deterministic():
    cfg = small(threads=3, **{"bench.mix": "standard", "bench.scale": 0.01,
                              "bench.txs_per_thread": 20})
    a = record_of(run_world(cfg, "dumbo-si"), cfg)
    b = record_of(run_world(cfg, "dumbo-si"), cfg)
    assert a.row() == b.row()


def test_si_history_of_bench_run():
    cfg = small(threads=4, **{"bench.mix": "standard", "bench.scale": 0.005,
                              "bench.txs_per_thread": 15, "bench.warehouses": 1})
    w = run_world(cfg, "dumbo-si")
    assert check_isolation(w.history, "si").ok
