import csv
import json
import subprocess
import sys

import pytest

from jumplab import cli
from jumplab.config import (build_config, canonical_text, config_digest, config_to_ini,
                            parse_config, parse_config_text)
from jumplab.errors import ConfigError


def test_parse_round_trip(tmp_path):
    cfg = build_config({}, "tail", paths=2000, seed=4)
    p = tmp_path / "c.ini"
    p.write_text(config_to_ini(cfg))
    back = parse_config(p)
    assert back == cfg
    assert config_digest(back) == config_digest(cfg)


def test_subcommand_defaults():
    assert build_config({}, "tail").theta0 == 0.25
    assert build_config({}, "ibp").x0 == (0.5, 0.25)
    assert build_config({}, "moments", paths=3000).paths == 3000
    iso = build_config({"model": "isotropic", "d": 3})
    assert iso.x0 == (0.0, 0.0, 0.0) and iso.xi == (1.0, 0.0, 0.0)


def test_digest_ignores_workers_only():
    a = build_config({}, "void")
    assert config_digest(a) == config_digest(a.with_(workers=4))
    assert config_digest(a) != config_digest(a.with_(seed=1))
    assert "run.workers" not in canonical_text(a)


def test_unknown_key_suggestion_and_line():
    text = "[measure]\nalpha = 1.0\nthetta0 = 0.5\n"
    with pytest.raises(ConfigError, match=r"c\.ini:3: unknown key 'thetta0'.*did you mean 'theta0'"):
        parse_config_text(text, "c.ini")


def test_wrong_section_and_unknown_section():
    with pytest.raises(ConfigError, match=r"belongs in \[measure\]"):
        parse_config_text("[run]\nalpha = 1\n")
    with pytest.raises(ConfigError, match=r"did you mean \[measure\]"):
        parse_config_text("[measur]\nalpha = 1\n")


def test_range_error_names_location_and_constraint(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[run]\npaths = 5000\n[measure]\nalpha = 2.5\n")
    with pytest.raises(ConfigError, match=r"bad\.ini:4: alpha.*stable-like intensity"):
        parse_config(p)


def test_parse_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config_text("[run]\npaths = many\n")
    with pytest.raises(ConfigError, match="not an integer"):
        parse_config_text("[run]\nseed = 1.5\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config_text("paths = 1\n")


def test_fmt_value_precision():
    assert cli.fmt_value(0.1) == "0.10000000000000001"
    assert cli.fmt_value(True) == "true"
    assert cli.fmt_value(3) == "3"
    assert float(cli.fmt_value(1 / 3)) == 1 / 3


def _run(tmp_path, *args):
    return cli.main([*args, "--out-dir", str(tmp_path)])


def test_simulate_outputs(tmp_path, capsys):
    code = _run(tmp_path, "simulate", "--paths", "1000", "--seed", "2")
    assert code == 0
    assert "simulate: PASS" in capsys.readouterr().out
    with (tmp_path / "simulate.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["path", "x1", "x2"] and len(rows) == 1001
    summary = json.loads((tmp_path / "simulate_summary.json").read_text())
    manifest = json.loads((tmp_path / "simulate_manifest.json").read_text())
    assert summary["passed"] and summary["seed"] == 2
    assert manifest["config_digest"] == summary["config_digest"]
    assert set(manifest["outputs"]) == {"simulate.csv", "simulate_summary.json"}
    assert manifest["backend"] in ("numba", "numpy")


def test_json_format(tmp_path):
    assert _run(tmp_path, "void", "--paths", "5000", "--format", "json") == 0
    data = json.loads((tmp_path / "void.json").read_text())
    assert data["columns"][0] == "r_lo" and len(data["rows"]) == 1


def test_conditions_subcommand(tmp_path):
    assert _run(tmp_path, "conditions") == 0
    assert _run(tmp_path, "conditions", "--model", "degenerate") == 1


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[measure]\nalpah = 1\n")
    assert _run(tmp_path, "void", "--config", str(bad)) == 2
    err = json.loads((tmp_path / "void_error.json").read_text())
    assert err["error"] == "ConfigError" and "alpha" in err["message"]
    assert _run(tmp_path, "void", "--paths", "10") == 2
    capsys.readouterr()
    # a later successful run clears the stale error file
    assert _run(tmp_path, "void", "--paths", "5000") == 0
    assert not (tmp_path / "void_error.json").exists()


def test_girsanov_contraction_error(tmp_path):
    assert _run(tmp_path, "girsanov", "--epsilon", "0.5", "--paths", "10000") == 2


def test_charfn_degenerate_axis(tmp_path):
    assert _run(tmp_path, "charfn", "--model", "degenerate", "--paths", "2000") == 0
    summary = json.loads((tmp_path / "charfn_summary.json").read_text())
    assert summary["checks"]["axis_2_deterministic"]


def test_tail_degenerate_control(tmp_path):
    with pytest.warns(RuntimeWarning):
        code = _run(tmp_path, "tail", "--model", "degenerate", "--paths", "2000")
    assert code == 0


def test_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "jumplab.cli", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("jumplab ")
