import pytest

from dumbolab.config import Config, env_overrides, load_config, parse_kv, resolve_engine


def test_defaults_match_documented_values():
    c = Config()
    assert c.pm.flush_latency_ns == 310
    assert c.pm.heap_mb == 128 and c.pm.log_mb == 128
    assert c.htm.max_retries == 10
    assert c.threads == c.dumbo.threads


def test_parse_kv_ignores_comments_and_blank_lines():
    assert parse_kv("# hi\n\npm.line_size = 64  # trailing\nhtm.max_retries=3\n") == {
        "pm.line_size": "64", "htm.max_retries": "3"}


def test_parse_kv_rejects_garbage():
    with pytest.raises(ValueError):
        parse_kv("just words")


def test_env_override_prefix_and_precedence(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("pm.flush_latency_ns = 100\nhtm.smt_halved = yes\n")
    env = {"DUMBOLAB_PM_FLUSH_LATENCY_NS": "400", "DUMBOLAB_ENGINE": "spht", "OTHER": "x"}
    assert env_overrides(env) == {"pm.flush_latency_ns": "400", "bench.engine": "spht"}
    c = load_config(f, {"htm.read_lines": "8"}, environ=env)
    assert c.pm.flush_latency_ns == 400
    assert c.htm.smt_halved is True
    assert c.htm.read_lines == 8
    assert c.bench.engine == "spht"


def test_unknown_key_and_bad_bool():
    c = Config()
    with pytest.raises(KeyError):
        c.set("pm.nope", "1")
    with pytest.raises(ValueError):
        c.set("htm.smt_halved", "maybe")


def test_tuple_coercion_and_dump_roundtrip():
    c = Config()
    c.set("sim.skew_ns", "0, 5,10")
    assert c.sim.skew_ns == (0, 5, 10)
    d = Config().update(parse_kv(c.dump()))
    assert d == c


def test_copy_is_deep_per_section():
    c = Config()
    d = c.copy()
    d.htm.read_lines = 1
    assert c.htm.read_lines == 4096


def test_marker_slot_and_thread_fallbacks():
    c = Config()
    assert c.marker_slots == c.pm.marker_slots
    c.dumbo.marker_slots = 32
    assert c.marker_slots == 32
    c.bench.threads = 3
    assert c.threads == 3


def test_smt_halves_capacity():
    c = Config()
    full = c.htm.capacities()
    c.htm.smt_halved = True
    assert c.htm.capacities() == (full[0] // 2, full[1] // 2)


def test_resolve_engine():
    c = Config()
    assert resolve_engine("dumbo", c) == "dumbo-si"
    c.dumbo.isolation = "opacity"
    assert resolve_engine("dumbo", c) == "dumbo-opa"
    assert resolve_engine("spht", c) == "spht"
    with pytest.raises(ValueError):
        resolve_engine("tl2", c)
