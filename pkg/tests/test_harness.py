import json
import math

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from thinplate import cli
from thinplate.errors import ConfigError, InsufficientData
from thinplate.harness import ExperimentConfig, RunRecord, fit_rate, run

QUICK_AUDIT = {
    "kind": "energy-audit",
    "h": 0.25,
    "T": 0.1,
    "grid": {"N_tan": 8, "N_thick": 5},
    "samples": 10,
}


def test_defaults_are_filled():
    cfg = ExperimentConfig.from_dict({"kind": "plate2d"})
    assert cfg["theta"] == 0.5 and cfg["grid"]["N_tan"] == 16
    assert cfg["material"]["normalization"] == 0.5


def test_kind_defaults_layer_under_user_values():
    cfg = ExperimentConfig.from_dict({"kind": "energy-audit", "grid": {"N_tan": 8}})
    assert cfg["grid"]["N_tan"] == 8 and cfg["grid"]["N_thick"] == 17
    assert cfg["initial"]["type"] == "low_frequency"


@pytest.mark.parametrize(
    "raw,path",
    [
        ({"kind": "plate2d", "colour": 1}, "colour"),
        ({"kind": "plate2d", "grid": {"N_tan": 12}}, "grid.N_tan"),
        ({"kind": "plate2d", "grid": {"spacing": 1}}, "grid.spacing"),
        ({"kind": "plate2d", "theta": -1}, "theta"),
        ({"kind": "plate2d", "h": 2.0}, "h"),
        ({"kind": "plate2d", "T": "soon"}, "T"),
        ({"kind": "plate2d", "seed": 1.5}, "seed"),
        ({"kind": "converge", "theta": 0.0}, "theta"),
        ({"kind": "unknown"}, "kind"),
        ({}, "kind"),
    ],
)
def test_bad_configs_name_the_offending_path(raw, path):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_dict(raw)
    assert str(exc.value).startswith(path)


def test_theta_zero_allowed_for_simulation():
    assert ExperimentConfig.from_dict({"kind": "simulate3d", "theta": 0})["theta"] == 0.0


def test_yaml_loading(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("kind: korn\nh_values: [1, 0.5]\n")
    cfg = ExperimentConfig.load(p)
    assert cfg["h_values"] == [1.0, 0.5]
    with pytest.raises(ConfigError):
        ExperimentConfig.from_yaml("kind: [unclosed")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.yaml")


def test_hash_is_stable_and_sensitive():
    a = ExperimentConfig.from_dict({"kind": "plate2d", "seed": 1})
    b = ExperimentConfig.from_yaml(yaml.safe_dump({"seed": 1, "kind": "plate2d"}))
    c = ExperimentConfig.from_dict({"kind": "plate2d", "seed": 2})
    assert a.sha256 == b.sha256 != c.sha256


def test_record_round_trip():
    rec = RunRecord({"n_smooth": math.inf}, "abc", "0.1.0", 1.5, {"x": [1.0, math.inf]}, {"t": 1e-6}, True, ["n"])
    back = RunRecord.from_json(rec.to_json())
    assert back == rec
    assert back.config["n_smooth"] == math.inf


# ---------------------------------------------------------------------------
# rate fits


def test_fit_recovers_exact_power_law():
    fit = fit_rate([(h, 3.0 * h**2.5) for h in (0.5, 0.25, 0.125, 0.0625)])
    assert fit.slope == pytest.approx(2.5)
    assert fit.within(2.5, 1e-9) and not fit.floor_detected
    assert max(abs(r) for r in fit.residuals) < 1e-12


@given(st.floats(0.5, 4.0), st.floats(1e-3, 1e3))
def test_fit_is_scale_invariant(p, c):
    hs = [2.0**-k for k in range(2, 7)]
    fit = fit_rate([(h, c * h**p) for h in hs])
    assert fit.slope == pytest.approx(p, abs=1e-9)


def test_floor_is_detected():
    hs = [0.5, 0.25, 0.125, 0.0625]
    errs = [h**2 for h in hs[:-1]] + [0.125**2 * 0.9]
    assert fit_rate(list(zip(hs, errs))).floor_detected


def test_fit_needs_three_points():
    with pytest.raises(InsufficientData):
        fit_rate([(0.5, 1.0), (0.25, 0.3)])
    with pytest.raises(InsufficientData):
        fit_rate([(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)])


# ---------------------------------------------------------------------------
# runs and command line


def test_run_writes_record(tmp_path):
    rec = run(ExperimentConfig.from_dict(dict(QUICK_AUDIT)), tmp_path)
    stored = RunRecord.from_json((tmp_path / "record.json").read_text())
    assert stored == rec
    assert set(rec.metrics["checks"]) == {"drift", "drift_order"}
    assert (tmp_path / "ledger_dt0.csv").exists()


def test_runs_are_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(QUICK_AUDIT))
    a = run(cfg, tmp_path / "a")
    b = run(cfg, tmp_path / "b")
    assert json.dumps(a.metrics, sort_keys=True) == json.dumps(b.metrics, sort_keys=True)


def write_cfg(tmp_path, raw):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(raw))
    return str(p)


def test_cli_pass(tmp_path, capsys):
    raw = {"kind": "plate2d", "forcing": {"type": "zero"}, "samples": 4}
    code = cli.main(["plate2d", "--config", write_cfg(tmp_path, raw), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_PASS
    assert "PASS" in capsys.readouterr().out


def test_cli_tolerance_failure(tmp_path, capsys):
    raw = dict(QUICK_AUDIT, tolerances={"drift": 1e-30})
    code = cli.main(["energy-audit", "--config", write_cfg(tmp_path, raw), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    assert cli.main(["plate2d", "--config", write_cfg(tmp_path, {"theta": -1})]) == cli.EXIT_CONFIG
    assert "theta" in capsys.readouterr().err
    assert cli.main(["korn", "--config", write_cfg(tmp_path, {"kind": "plate2d"})]) == cli.EXIT_CONFIG
    assert cli.main(["korn", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG
    assert cli.main(["korn", "--threads", "0"]) == cli.EXIT_CONFIG


def test_cli_abort(tmp_path, capsys):
    raw = {
        "kind": "simulate3d",
        "h": 0.25,
        "T": 0.1,
        "grid": {"N_tan": 8, "N_thick": 5},
        "initial": {"type": "low_frequency", "amplitude": 0.5},
        "forcing": {"type": "zero"},
    }
    code = cli.main(["simulate3d", "--config", write_cfg(tmp_path, raw), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_ABORT
    assert "DomainViolation" in capsys.readouterr().err


def test_cli_seed_override(tmp_path):
    out = tmp_path / "o"
    raw = dict(QUICK_AUDIT)
    assert cli.main(["energy-audit", "--config", write_cfg(tmp_path, raw), "--out", str(out), "--seed", "7"]) in (0, 1)
    rec = json.loads((out / "record.json").read_text())
    assert rec["config"]["seed"] == 7


def test_cli_small_convergence_run(tmp_path):
    raw = {
        "kind": "converge",
        "theta": 1.0,
        "T": 0.25,
        "h_values": [0.25, 0.125, 0.0625],
        "grid": {"N_tan": 8, "N_thick": 5},
        "richardson": False,
    }
    out = tmp_path / "o"
    code = cli.main(["converge", "--config", write_cfg(tmp_path, raw), "--out", str(out)])
    assert code in (cli.EXIT_PASS, cli.EXIT_FAIL)
    rec = json.loads((out / "record.json").read_text())
    assert np.isfinite(rec["metrics"]["slope"])
    assert (out / "rate_report.json").exists() and (out / "errors.csv").exists()
