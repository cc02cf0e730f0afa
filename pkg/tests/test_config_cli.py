import csv
import json
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crflow.cli import (
    EXIT_CONFIG, EXIT_HALT, EXIT_OK, EXIT_SOLVER, EXIT_VERDICT, main, run_scenario, snapshot_json,
)
from crflow.config import echo_config, parse_config
from crflow.diagnostics import ROW_FIELDS
from crflow.errors import ConfigError
from crflow.flow import Mode
from crflow.geometry.grid import Family

from scenarios import ah_config, closed_config

MINIMAL = """
family = "AH_BALL"
m = 3

[grid]
s_max = 8.0
n_points = 101

[time]
t_end = 0.002
"""


# --- parsing ----------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.family is Family.AH_BALL and cfg.m == 3
    assert cfg.time.cfl_sigma == 0.2
    assert cfg.normalize is True
    assert cfg.mode is Mode.CRF
    assert cfg.perturbation.seed == 0 and cfg.perturbation.amplitude == 0.0
    assert cfg.tolerances.elliptic == 1e-10
    assert cfg.output.formats == ("json", "csv")


def test_closed_defaults_do_not_normalize():
    cfg = closed_config()
    assert cfg.normalize is False


def test_positive_c_rejected_naming_rule():
    text = 'family = "CLOSED"\nm = 2\nc = 1.0\n[grid]\nn_points = 51\n[time]\nt_end = 0.1\n'
    with pytest.raises(ConfigError, match="spectral collision"):
        parse_config(text)
    parse_config(text.replace("c = 1.0", "c = 1.0\nallow_positive_c = true"))


def test_unknown_key_names_key_and_line():
    text = MINIMAL.replace("t_end = 0.002", "t_end = 0.002\ncfl_sgima = 0.1")
    with pytest.raises(ConfigError, match=r"cfl_sgima.*\(line 11\)"):
        parse_config(text)


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="colour"):
        parse_config(MINIMAL + '\n[colour]\nx = 1\n')


def test_parse_failure_reports_line():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config('family = "AH_BALL"\nm = 3\nthis is not toml\n')


def test_dotted_keys_accepted():
    cfg = parse_config('family = "AH_BALL"\nm = 3\ngrid.s_max = 8.0\ngrid.n_points = 101\n'
                       'time.t_end = 0.01\nperturbation.amplitude = 0.01\n')
    assert cfg.grid.n_points == 101 and cfg.perturbation.amplitude == 0.01


@pytest.mark.parametrize("patch,rule", [
    (("m = 3", "m = 1"), "fiber dimension"),
    (("t_end = 0.002", "t_end = -1.0"), "time"),
    (("n_points = 101", 'n_points = "many"'), "expects a int"),
    (("m = 3", 'm = 3\nmode = "FAST"'), "mode"),
    (("m = 3", 'm = 3\nc = -1.0'), "AH constant"),
])
def test_rule_violations(patch, rule):
    with pytest.raises(ConfigError, match=rule):
        parse_config(MINIMAL.replace(*patch))


def test_closed_normalization_rejected():
    text = 'family = "CLOSED"\nm = 2\nc = -1.0\nnormalize = true\n[grid]\nn_points = 51\n[time]\nt_end = 0.1\n'
    with pytest.raises(ConfigError, match="normalization"):
        parse_config(text)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(5, 5000),
    t_end=st.floats(1e-4, 10, allow_nan=False),
    sigma=st.floats(0.01, 0.4),
    amp=st.floats(-0.2, 0.2, allow_nan=False),
    seed=st.integers(0, 2 ** 31 - 1),
    profile=st.sampled_from(["warp", "lapse", "both", "random"]),
    mode=st.sampled_from(["CRF", "DCRF", "BOTH_COMPARE"]),
    ladder=st.lists(st.integers(5, 999), max_size=3),
)
def test_echo_round_trip(n, t_end, sigma, amp, seed, profile, mode, ladder):
    text = (f'family = "AH_BALL"\nm = 3\nmode = "{mode}"\n[grid]\ns_max = 8.0\nn_points = {n}\n'
            f'[time]\nt_end = {t_end!r}\ncfl_sigma = {sigma!r}\n'
            f'[perturbation]\namplitude = {amp!r}\nseed = {seed}\nprofile = "{profile}"\n'
            f'[ladder]\nn_points = {ladder}\n')
    cfg = parse_config(text)
    assert parse_config(echo_config(cfg)) == cfg


def test_echo_round_trip_closed():
    cfg = closed_config(c=1.0, allow_positive_c=True, snapshot_interval=0.01)
    assert parse_config(echo_config(cfg)) == cfg


# --- scenarios and artifacts ------------------------------------------------

def test_hyperbolic_scenario_artifacts(tmp_path):
    res = run_scenario(parse_config(MINIMAL), tmp_path)
    assert res.exit_code == EXIT_OK and res.summary["all_pass"]
    snaps = sorted((tmp_path / "snapshots").glob("snapshot_*.json"))
    assert len(snaps) == 2
    data = json.loads(snaps[-1].read_text())
    assert set(data) == {"t", "s_values", "a", "b", "p", "k_rad", "k_sph", "R"}
    assert len(data["a"]) == 101
    with open(tmp_path / "diagnostics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == ROW_FIELDS and len(rows) == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seed"] == 0 and summary["config"]["grid"]["n_points"] == 101
    assert parse_config((tmp_path / "config.toml").read_text()) == parse_config(MINIMAL)


def test_snapshot_numbers_have_17_significant_digits(tmp_path):
    cfg = ah_config(n=101, t_end=0.002, amp=0.03, normalize=False)
    run_scenario(cfg, tmp_path)
    text = (tmp_path / "snapshots" / "snapshot_00001.json").read_text()
    data = json.loads(text)
    a = np.array(data["a"])
    assert np.any(a != 1.0)
    # every number is printed in shortest-exact 17-digit form and reparses exactly
    for tok in re.findall(r"-?\d\.\d+e[-+]\d+|-?\d+\.\d+", text)[:50]:
        digits = re.sub(r"e.*|[-.]", "", tok).lstrip("0")
        assert len(digits) <= 17


def test_snapshot_json_round_trips_floats():
    from crflow.flow import make_state
    from crflow.geometry.metric import build_background
    st_ = make_state(build_background("AH_BALL", 3, s_max=8.0, n_points=11))
    data = json.loads(snapshot_json(st_))
    assert np.array_equal(np.array(data["b"]), st_.metric.b)
    assert np.array_equal(np.array(data["R"]), st_.curv.scalar)


def test_bit_identical_artifacts(tmp_path):
    cfg = ah_config(n=101, t_end=0.004, amp=0.05, normalize=False, snapshot_interval=0.001, seed=9)
    run_scenario(cfg, tmp_path / "a")
    run_scenario(cfg, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 5
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_both_compare_scenario(tmp_path):
    cfg = ah_config(n=101, t_end=0.004, amp=0.05, normalize=False, snapshot_interval=0.002,
                    mode="BOTH_COMPARE")
    res = run_scenario(cfg, tmp_path)
    assert res.exit_code == EXIT_OK
    for sub in ("dcrf", "pulled_back", "crf"):
        assert (tmp_path / sub / "diagnostics.csv").exists()
    with open(tmp_path / "comparison.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert "gauge_agreement" in rows[0] and len(rows) == 3
    assert json.loads((tmp_path / "summary.json").read_text())["phi_monotone"] is True


def test_ladder_scenario_fits_order(tmp_path):
    text = MINIMAL.replace("t_end = 0.002", "t_end = 0.05") + \
        "\n[perturbation]\namplitude = 0.01\nseed = 1\n\n[ladder]\nn_points = [401, 801]\n"
    res = run_scenario(parse_config(text), tmp_path)
    assert res.exit_code == EXIT_OK
    assert (tmp_path / "N401" / "summary.json").exists() and (tmp_path / "N801" / "summary.json").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    with open(tmp_path / "convergence.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n_points", "ds", "drift_common_band"]
    d = [float(r[2]) for r in rows[1:]]
    # two-grid fit is the plain log2 ratio; the pass flag follows the 1.9 threshold
    assert summary["drift_order_fit"] == pytest.approx(np.log2(d[0] / d[1]), rel=1e-12)
    assert summary["drift_order_fit"] > 1.8
    assert summary["drift_order_pass"] == (summary["drift_order_fit"] >= 1.9)


# --- exit codes via the entry point -----------------------------------------

def _write(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    return str(path)


def test_exit_ok(tmp_path, capsys):
    assert main(["run", _write(tmp_path, MINIMAL), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["exit_code"] == 0


def test_exit_config_error(tmp_path, capsys):
    bad = MINIMAL.replace("t_end", "cfl_sgima = 0.1\nt_end")
    assert main(["run", _write(tmp_path, bad)]) == EXIT_CONFIG
    assert "cfl_sgima" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_exit_solver_failure(tmp_path):
    text = ('family = "CLOSED"\nm = 2\nc = 1.0\nallow_positive_c = true\n[grid]\nn_points = 401\n'
            '[time]\nt_end = 0.001\n[perturbation]\namplitude = 1e-4\n')
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, text), "--out", str(out)]) == EXIT_SOLVER
    failure = json.loads((out / "failure.json").read_text())
    assert failure["error"] == "NearSingularOperatorError" and failure["partial"]


def test_exit_degeneration_halt(tmp_path):
    text = MINIMAL.replace("t_end = 0.002", "t_end = 0.05").replace("m = 3", "m = 3\nnormalize = false") + \
        '\n[perturbation]\namplitude = 2.0\nprofile = "warp"\n'
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, text), "--out", str(out)]) == EXIT_HALT
    summary = json.loads((out / "summary.json").read_text())
    assert summary["partial"] is True and "curvature bound exceeded" in summary["halt_reason"]


def test_exit_verdict_failure_in_check_mode(tmp_path):
    # an impossible drift band makes the constraint verdict fail
    text = MINIMAL.replace("m = 3", "m = 3\nnormalize = false") + \
        "\n[perturbation]\namplitude = 0.05\n\n[tolerances]\ndrift_band = 1e-12\n"
    path = _write(tmp_path, text)
    assert main(["run", path, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["run", path, "--out", str(tmp_path / "b"), "--check"]) == EXIT_VERDICT


def test_echo_subcommand(tmp_path, capsys):
    assert main(["echo", _write(tmp_path, MINIMAL)]) == EXIT_OK
    assert parse_config(capsys.readouterr().out) == parse_config(MINIMAL)
