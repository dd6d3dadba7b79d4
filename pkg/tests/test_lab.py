import json

import pytest

from flatlab.errors import ConfigError, ReportError
from flatlab.lab.cli import main
from flatlab.lab.config import DEFAULTS, ScenarioConfig, load_scenario_config, rng_for
from flatlab.lab.report import FAIL, PASS, Assertion, Report, emit_report


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_defaults_are_valid():
    for name in DEFAULTS:
        cfg = ScenarioConfig(name)
        assert cfg.params.keys() == DEFAULTS[name].keys()
        cfg.model()


def test_config_rejections():
    with pytest.raises(ConfigError):
        ScenarioConfig("no-such-scenario")
    with pytest.raises(ConfigError):
        ScenarioConfig("ergodic-gap", params={"eps": -1.0})
    with pytest.raises(ConfigError):
        ScenarioConfig("ergodic-gap", params={"n_starts": 2.5})
    with pytest.raises(ConfigError):
        ScenarioConfig("ergodic-gap", params={"bogus": 1})
    with pytest.raises(ConfigError):
        ScenarioConfig("nonwandering", surface={"preset": "FlatCylinderTorus"})
    with pytest.raises(ConfigError):
        ScenarioConfig("ergodic-gap", seed=-1)


def test_key_value_config(tmp_path):
    path = write(tmp_path, "c.cfg", "# small run\nn_starts = 3\nT = 100, 200\nseed = 7\n")
    cfg = load_scenario_config("ergodic-gap", path)
    assert cfg.params["n_starts"] == 3 and cfg.params["T"] == [100.0, 200.0]
    assert cfg.seed == 7
    assert load_scenario_config("ergodic-gap", path, seed=1).seed == 1
    with pytest.raises(ConfigError):
        load_scenario_config("ergodic-gap", str(tmp_path / "missing.cfg"))
    bad = write(tmp_path, "b.json", '{"scenario": "nonwandering"}')
    with pytest.raises(ConfigError):
        load_scenario_config("ergodic-gap", bad)


def test_seeded_streams_are_order_free():
    a = rng_for(3, "ergodic-gap", 5).random(4)
    rng_for(3, "ergodic-gap", 4).random(100)
    assert (rng_for(3, "ergodic-gap", 5).random(4) == a).all()
    assert not (rng_for(4, "ergodic-gap", 5).random(4) == a).all()


def test_report_status_and_json(tmp_path):
    rep = Report("demo", {"x": 1})
    rep.add("ok", 1, 0.5, "<=", 1.0)
    assert rep.status == PASS and rep.exit_code == 0
    rep.add("bad", 2, float("nan"), "<", 1.0)
    assert rep.status == FAIL and rep.exit_code == 1
    assert not Assertion.check("none", 3, None, "<", 1.0).passed
    rep.tables["t"] = (["a"], [(1,)])
    emit_report(rep, str(tmp_path / "out"))
    data = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert data["status"] == FAIL
    target = tmp_path / "file"
    target.write_text("")
    with pytest.raises(ReportError):
        emit_report(rep, str(target / "sub"))


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "nw")
    assert main(["run", "nonwandering", "--out", out]) == 0
    assert "[PASS] criterion 9" in capsys.readouterr().out
    json.loads((tmp_path / "nw" / "summary.json").read_text())

    strict = write(tmp_path, "strict.cfg", "decay_ratio = 0\n")
    assert main(["run", "nonwandering", "--config", strict, "--out", str(tmp_path / "s")]) == 1
    assert "[FAIL]" in capsys.readouterr().out

    broken = write(tmp_path, "broken.cfg", "n_max = 40\n")
    assert main(["run", "nonwandering", "--config", broken, "--out", str(tmp_path / "b")]) == 2
    assert main(["run", "nonwandering", "--workers", "0", "--out", str(tmp_path / "w")]) == 2


def test_cli_validate(tmp_path, capsys):
    good = write(tmp_path, "s.cfg", "preset = FlatCylinderTorus\nl = 4\n")
    assert main(["validate", good]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    assert main(["validate", write(tmp_path, "bad.cfg", "preset = Sphere\n")]) == 2
    assert main(["validate", write(tmp_path, "neg.cfg", "preset = FlatCylinderTorus\nl = -1\n")]) == 2


def test_summary_is_independent_of_workers(tmp_path):
    cfg = write(tmp_path, "e.cfg", "n_starts = 4\nT = 50, 100\n")
    for w in (1, 2):
        assert main(["run", "ergodic-gap", "--config", cfg, "--workers", str(w),
                     "--out", str(tmp_path / f"w{w}")]) == 0
    a = (tmp_path / "w1" / "summary.json").read_text()
    b = (tmp_path / "w2" / "summary.json").read_text()
    assert a == b
