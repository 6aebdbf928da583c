"""Batch front end: config validation, report emission, determinism."""

import json
import os

import numpy as np
import pytest

from schauderlab.cli import SCHEMA_VERSION, load_config, main, run
from schauderlab.errors import ConfigError

MINIMAL = {
    "schema_version": 1,
    "problem": {
        "d": 1, "a": [["1"]], "b": ["0"], "c": "1",
        "f": "exp(-x1^2)*step(1-t)*step(t)", "g": "0",
        "alpha": 0.5, "time_window": [0.0, 1.0], "t_breakpoints": [],
    },
    "grid": {"radius": 5.0, "n": 49, "n_time": 24},
    "mode": "cauchy",
    "suites": [{"name": "integral_residual", "threshold": 0.01}],
    "seed": 0,
    "output": {"report": "report.json", "csv": "solution.csv",
               "plot": "plots.gp"},
}


def write_cfg(tmp_path, patch=None, name="cfg.json"):
    cfg = json.loads(json.dumps(MINIMAL))
    if patch:
        for path, value in patch.items():
            node = cfg
            keys = path.split(".")
            for k in keys[:-1]:
                node = node[k]
            node[keys[-1]] = value
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_report(out_dir, name="report.json"):
    with open(os.path.join(out_dir, name), "r", encoding="utf-8") as fh:
        return json.load(fh)


def test_minimal_config_passes(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "out")
    code = run(cfg, out_dir=out)
    assert code == 0
    rep = read_report(out)
    assert rep["schema_version"] == SCHEMA_VERSION
    assert len(rep["audits"]) == 1
    assert rep["audits"][0]["name"] == "integral_residual"
    assert rep["audits"][0]["pass"] is True
    assert rep["hypotheses"]["ok"] is True
    assert os.path.exists(os.path.join(out, "solution.csv"))
    assert os.path.exists(os.path.join(out, "plots.gp"))


def test_alpha_out_of_range_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, {"problem.alpha": 1.5})
    code = run(cfg, out_dir=str(tmp_path / "out"))
    assert code == 3
    rep = read_report(str(tmp_path / "out"))
    assert rep["error"]["kind"] == "config"
    assert "alpha" in rep["error"]["reason"]


def test_unknown_audit_rejected(tmp_path):
    cfg = write_cfg(tmp_path, {"suites": [{"name": "nonsense"}]})
    assert run(cfg, out_dir=str(tmp_path / "out")) == 3


def test_bad_expression_rejected(tmp_path):
    cfg = write_cfg(tmp_path, {"problem.f": "2+*x1"})
    assert run(cfg, out_dir=str(tmp_path / "out")) == 3


def test_oversized_grid_rejected(tmp_path):
    cfg = write_cfg(tmp_path, {"grid.n": 513})
    assert run(cfg, out_dir=str(tmp_path / "out")) == 3


def test_schema_invalid_never_reaches_numerics(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert run(str(p), out_dir=str(tmp_path / "out")) == 3


def test_failed_audit_gives_exit_two(tmp_path):
    cfg = write_cfg(tmp_path, {"suites": [
        {"name": "integral_residual", "threshold": 1e-15}]})
    assert run(cfg, out_dir=str(tmp_path / "out")) == 2


def test_report_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path)
    outs = []
    for tag in ("a", "b"):
        out = str(tmp_path / tag)
        assert run(cfg, out_dir=out, seed=7) == 0
        with open(os.path.join(out, "report.json")) as fh:
            lines = [ln for ln in fh.read().splitlines()
                     if '"timestamp"' not in ln]
        outs.append("\n".join(lines))
    assert outs[0] == outs[1]


def test_csv_layout(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "out")
    run(cfg, out_dir=out)
    with open(os.path.join(out, "solution.csv")) as fh:
        header = fh.readline().strip()
        first = fh.readline().strip().split(",")
    assert header == "t,x1,u,ut,grad_norm,hess_trace"
    floats = [float(v) for v in first]
    assert len(floats) == 6
    # values round-trip through repr
    assert first[0] == repr(floats[0])


def test_check_verb(tmp_path):
    cfg = write_cfg(tmp_path)
    out = str(tmp_path / "out")
    assert main(["check", "--config", cfg, "--out", out]) == 0
    rep = read_report(out)
    assert rep["hypotheses"]["delta"] == 1.0
    assert rep["audits"] == []


def test_audit_names_validated_at_load(tmp_path):
    cfg = write_cfg(tmp_path)
    loaded = load_config(cfg)
    assert loaded["mode"] == "cauchy"
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"mode": "nonsense"}, name="m.json"))


def test_repo_sample_configs_load():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    for name in ("heat_minimal.json", "schauder_sweep.json"):
        loaded = load_config(os.path.join(here, "configs", name))
        assert loaded["spec"].alpha == 0.5
