"""The dycalc command-line runner."""
import csv
import json
import subprocess
import sys

import pytest

from dycalc.cli import COMMANDS, ConfigError, dumps_stable, main, validate_config

GRID = {"d": 1, "l_min": -3, "l_max": 0}


def _run(tmp_path, cfg, name="out", extra=()):
    cpath = tmp_path / f"{name}.json"
    cpath.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main(["--config", str(cpath), "--out", str(out), *extra])
    return code, out


def test_haar_roundtrip_exits_zero(tmp_path):
    """[TRIVIAL]"""
    code, out = _run(tmp_path, {"command": "haar-roundtrip", "seed": 1, "grid": GRID})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["pass"] and rep["command"] == "haar-roundtrip"


def test_zero_kernel_manifest(tmp_path):
    """[TRIVIAL] zero kernel: zero residual, every paraproduct coefficient group present, all values zero."""
    cfg = {"command": "decompose", "seed": 2, "grid": GRID, "kernel": {"name": "zero"}}
    code, out = _run(tmp_path, cfg)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["paraproducts"]) == {"0", "1", "2"}
    assert rep["metrics"]["relative_residual"] == 0


def test_bad_config_exits_two_and_writes_nothing(tmp_path):
    """[TRIVIAL]"""
    code, out = _run(tmp_path, {"command": "no-such-thing", "grid": GRID})
    assert code == 2 and not out.exists()
    code, out = _run(tmp_path, {"command": "haar-roundtrip", "grid": GRID, "colour": 3}, "o2")
    assert code == 2 and not out.exists()
    code, out = _run(tmp_path, {"command": "haar-roundtrip", "grid": {"d": 4, "l_min": 0, "l_max": 0}}, "o3")
    assert code == 2 and not out.exists()


def test_runs_are_byte_identical(tmp_path):
    """[TRIVIAL] same config and seed, same bytes."""
    cfg = {"command": "sparse-stopping", "seed": 11, "grid": GRID}
    _, a = _run(tmp_path, cfg, "a")
    _, b = _run(tmp_path, cfg, "b")
    for name in ("report.json", "report.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    """[TRIVIAL]"""
    cfg = {"command": "sparse-form", "seed": 1, "grid": GRID}
    _, a = _run(tmp_path, cfg, "a", ("--seed", "5"))
    rep = json.loads((a / "report.json").read_text())
    assert rep["config"]["seed"] == 5


def test_sparse_form_csv_rows(tmp_path):
    """[TRIVIAL] header plus one row per cube."""
    code, out = _run(tmp_path, {"command": "sparse-form", "seed": 4, "grid": GRID})
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    rows = list(csv.reader((out / "report.csv").open()))
    assert len(rows) == 1 + rep["metrics"]["cubes"]
    assert "product_of_averages" in rows[0]


def test_config_echo_validates(tmp_path):
    """[TRIVIAL] the echoed config is itself a valid config."""
    _, out = _run(tmp_path, {"command": "rad-norm", "seed": 9, "grid": GRID})
    rep = json.loads((out / "report.json").read_text())
    validate_config(rep["config"])


def test_tolerance_failure_exits_one(tmp_path, capsys):
    """[TRIVIAL] an impossible tolerance fails and is named on stderr."""
    cfg = {"command": "haar-roundtrip", "seed": 1, "grid": GRID, "tolerances": {"gram_deviation": -1.0}}
    with pytest.raises(ConfigError):
        validate_config(cfg)
    cfg["tolerances"]["gram_deviation"] = 0.0
    cfg["tolerances"]["roundtrip_residual"] = 0.0
    code, out = _run(tmp_path, cfg)
    err = capsys.readouterr().err
    rep = json.loads((out / "report.json").read_text())
    if rep["pass"]:
        pytest.skip("round trip happened to be bitwise exact")
    assert code == 1 and "tolerance failure" in err


def test_every_command_validates():
    """[TRIVIAL]"""
    for c in COMMANDS:
        validate_config({"command": c, "grid": GRID})


def test_dumps_stable_is_sorted_and_round_trips():
    """[TRIVIAL]"""
    s = dumps_stable({"b": 0.1, "a": [1, 2.5], "c": 1 + 2j})
    assert s.index('"a"') < s.index('"b"') < s.index('"c"')
    back = json.loads(s)
    assert back["b"] == 0.1 and back["c"] == {"re": 1.0, "im": 2.0}


def test_module_entry_point(tmp_path):
    """[TRIVIAL] python -m dycalc behaves like the console script."""
    cpath = tmp_path / "c.json"
    cpath.write_text(json.dumps({"command": "haar-roundtrip", "seed": 0, "grid": GRID}))
    res = subprocess.run([sys.executable, "-m", "dycalc", "--config", str(cpath), "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
