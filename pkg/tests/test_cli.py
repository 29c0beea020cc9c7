import csv
import io

import pytest

from dumbolab.bench import CSV_COLUMNS
from dumbolab.cli import main

SMALL = ["--set", "pm.heap_mb=8", "--set", "pm.log_mb=2"]


def test_print_config_applies_overrides(capsys):
    assert main(["print-config", "--set", "pm.flush_latency_ns=500"]) == 0
    assert "flush_latency_ns = 500" in capsys.readouterr().out


def test_print_config_rejects_bad_set():
    with pytest.raises(SystemExit):
        main(["print-config", "--set", "novalue"])


def test_bench_to_stdout(capsys):
    rc = main(["bench", *SMALL, "--engine", "dumbo-si,htm-sgl", "--threads", "1,2",
               "--mix", "standard", "--txs", "5", "--scale", "0.01"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [(r["engine"], r["threads"]) for r in rows] == [
        ("dumbo-si", "1"), ("dumbo-si", "2"), ("htm-sgl", "1"), ("htm-sgl", "2")]
    assert list(rows[0]) == CSV_COLUMNS


def test_bench_report_and_recover(tmp_path, capsys):
    out = tmp_path / "res"
    rc = main(["bench", *SMALL, "--engine", "dumbo", "--threads", "2", "--txs", "5",
               "--scale", "0.01", "--out", str(out), "--gnuplot",
               "--save-image", str(tmp_path / "img")])
    assert rc == 0
    assert {p.name for p in out.iterdir()} == {"results.csv", "throughput.dat", "breakdown.dat"}
    heap_csv = tmp_path / "heap.csv"
    assert main(["recover", str(tmp_path / "img" / "dumbo-si-2t"), "--heap-out", str(heap_csv)]) == 0
    assert heap_csv.read_text().startswith("addr,value\n")
    assert "replayed" in capsys.readouterr().err


def test_bench_bad_mix_exits_nonzero(capsys):
    assert main(["bench", *SMALL, "--mix", "payment:10", "--txs", "2"]) == 2
    assert "config:" in capsys.readouterr().err


def test_check_litmus_dir(tmp_path, capsys):
    (tmp_path / "t.lit").write_text("T0: beginRO; read x; commit\nT1: beginUpd; write x 1; commit\n")
    assert main(["check", "--litmus", str(tmp_path), "--engine", "dumbo-si,spht"]) == 0
    out = capsys.readouterr().out
    assert out.count("ok  ") == 2


def test_check_reports_failure(tmp_path, capsys):
    (tmp_path / "t.lit").write_text("T0: beginRO; read x; read x; commit\n"
                                    "T1: beginUpd; write x 1; commit\n")
    rc = main(["check", "--litmus", str(tmp_path), "--engine", "dumbo-si",
               "--set", "dumbo.isolation_wait=false"])
    assert rc == 1 and "FAIL" in capsys.readouterr().out


def test_check_sweeps(capsys):
    rc = main(["check", "--skip-litmus", "--crash-sweep", "--min-images", "50",
               "--engine", "dumbo-si", "--stop-rule", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "crash-sweep dumbo-si" in out and "stop-rule n=2" in out


def test_replay_bench(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["replay-bench", "--threads", "2,4", "--txs", "500", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3


def test_unknown_key_is_a_clean_error():
    with pytest.raises(SystemExit, match="config error"):
        main(["print-config", "--set", "pm.nope=1"])


def test_env_override(monkeypatch, capsys):
    monkeypatch.setenv("DUMBOLAB_PM_FLUSH_LATENCY_NS", "777")
    assert main(["print-config"]) == 0
    assert "flush_latency_ns = 777" in capsys.readouterr().out
