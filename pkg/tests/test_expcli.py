import csv
import json
import math
import os

import numpy as np
import pytest

from fragrate import cli
from fragrate.errors import ConfigError, InsufficientPoints
from fragrate.expcli import (Check, ExperimentRecord, exit_status, fit_rate, load_config, parse_config, read_record,
                             report, run, simulate_record, write_record)

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SMALL_PRESENCE = """
[experiment]
kind = presence-confined
seed = 3
n_replicas = 20000
n_paths = 100000

[parameters]
v = 0.2
t_checkpoints = 2, 3, 4, 5, 6
"""

SMALL_MARTINGALE = """
[experiment]
kind = martingale-mean
seed = 5
n_replicas = 2000

[parameters]
v = 0.5
p = 0.5, 1.0
t_checkpoints = 1.0, 2.0
"""


# ---------------------------------------------------------------- fitting

def test_fit_exact_exponential():
    ts = np.arange(1.0, 9.0)
    fit = fit_rate([(t, 3.0 * math.exp(-0.3 * t), None) for t in ts])
    assert fit.slope == pytest.approx(-0.3, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
    assert not fit.weighted


def test_fit_constant_series():
    fit = fit_rate([(t, 2.5, 0.1) for t in range(1, 6)])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert fit.weighted and fit.contains(0.0)


def test_fit_interval_coverage():
    rng = np.random.default_rng(2024)
    ts = np.arange(1.0, 11.0)
    truth = -0.2
    hits = 0
    for _ in range(100):
        rel = 0.02 * (1 + ts / 5)  # heteroscedastic relative errors
        y = np.exp(truth * ts) * np.exp(rng.normal(0, rel))
        fit = fit_rate(list(zip(ts, y, rel * y)))
        hits += fit.contains(truth)
    assert 88 <= hits <= 100


def test_fit_needs_three_points():
    with pytest.raises(InsufficientPoints):
        fit_rate([(1.0, 1.0, None), (2.0, 0.5, None)])
    with pytest.raises(InsufficientPoints):
        fit_rate([(1.0, 1.0, None), (2.0, 0.5, None), (3.0, 0.0, None)])


def test_fit_excludes_zeros():
    pts = [(1.0, 1.0, None), (2.0, math.exp(-1), None), (3.0, 0.0, None), (4.0, math.exp(-3), None)]
    fit = fit_rate(pts)
    assert fit.excluded == (3.0,)
    assert fit.n_used == 3
    assert fit.slope == pytest.approx(-1.0)


def test_fit_rejects_negative_estimates():
    with pytest.raises(ValueError):
        fit_rate([(1.0, 1.0, None), (2.0, -0.5, None), (3.0, 0.2, None)])


# ---------------------------------------------------------------- config

def test_config_round_trip_and_hash():
    cfg = parse_config(SMALL_PRESENCE)
    again = parse_config(cfg.to_text())
    assert again.canonical() == cfg.canonical()
    assert again.hash == cfg.hash
    assert cfg.replace("experiment", seed=4).hash != cfg.hash
    assert cfg.params["t_checkpoints"] == (2.0, 3.0, 4.0, 5.0, 6.0)
    assert cfg.tol["slope"] == 0.03


@pytest.mark.parametrize("text, match", [
    ("[experiment]\nkind = growth\n[bogus]\nx = 1\n", "unknown section"),
    ("[experiment]\nkind = growth\ncolour = red\n", "unknown key"),
    ("[experiment]\nkind = nope\n", "kind must be one of"),
    ("[experiment]\nkind = growth\n[parameters]\na = 1.5\n", "0 < a < 1 < b"),
    ("[experiment]\nkind = growth\n[parameters]\nt_checkpoints = 3, 2\n", "strictly increasing"),
    ("[experiment]\nkind = growth\n[parameters]\nv = -1\n", "positive"),
    ("[experiment]\nkind = growth\nseed = x\n", "cannot parse"),
    ("[experiment]\nkind = growth\n[model]\nmodel = beta-binary\ntheta = 2\n", r"\[model\]"),
    ("[experiment]\nkind = growth\n[tolerances]\nslope = -1\n", "non-negative"),
    ("not an ini", "malformed"),
])
def test_config_rejections(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_shipped_configs_parse():
    names = sorted(f for f in os.listdir(CONFIGS) if f.endswith(".ini"))
    assert len(names) >= 12
    for name in names:
        load_config(os.path.join(CONFIGS, name))


# ---------------------------------------------------------------- experiments

def test_rates_table_csv_has_vmin_row(tmp_path):
    cfg = load_config(os.path.join(CONFIGS, "rates_uniform.ini"))
    rec = run(cfg)
    assert rec.passed
    _, csv_path = write_record(rec, str(tmp_path))
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    vmin = 3 - 2 * math.sqrt(2)
    hit = [r for r in rows if abs(float(r["v"]) - vmin) < 1e-12]
    assert len(hit) == 1
    assert abs(float(hit[0]["C"])) <= 1e-7
    assert hit[0]["regime"] == "critical"
    assert {r["regime"] for r in rows} == {"critical", "supercritical", "subcritical"}


def test_martingale_mean_pass_logic():
    cfg = parse_config(SMALL_MARTINGALE)
    rec = run(cfg)
    assert len(rec.checks) == 6
    for c in rec.checks:
        se = float(c.detail.split("=")[1])
        assert c.passed == (abs(c.value - 1.0) <= c.tolerance * se)
    strict = run(cfg.replace("tolerances", n_se=0.0))
    assert not strict.passed
    assert [c.value for c in strict.checks] == [c.value for c in rec.checks]


def test_presence_confined_small():
    rec = run(parse_config(SMALL_PRESENCE))
    assert set(rec.fits) == {"presence", "many_to_one"}
    assert rec.reference["rho"] > 0.2
    names = [c.name for c in rec.checks]
    assert names == ["presence slope", "many-to-one slope", "moment sandwich"]
    assert all(math.isfinite(c.value) for c in rec.checks)
    assert rec.passed
    for row in rec.points:
        assert row["lower"] <= row["presence"] + 3 * (row["se"] + row["lower_se"])


def test_run_is_deterministic():
    cfg = parse_config(SMALL_PRESENCE)
    a, b = run(cfg), run(cfg)
    assert a.to_json(wall_clock=False) == b.to_json(wall_clock=False)
    c = run(cfg.replace("experiment", seed=4))
    assert c.to_dict(False)["points"] != a.to_dict(False)["points"]


def test_simulate_record():
    cfg = load_config(os.path.join(CONFIGS, "simulate_confined.ini"))
    rec = simulate_record(cfg)
    assert not rec.checks
    assert rec.points and {"replica", "t"} <= set(rec.points[0])


def test_record_json_round_trip(tmp_path):
    rec = run(parse_config(SMALL_MARTINGALE))
    js, _ = write_record(rec, str(tmp_path), "x_")
    assert os.path.basename(js) == "x_martingale-mean.json"
    back = read_record(js)
    assert back.to_dict() == rec.to_dict()


def test_sweep_has_eighteen_rows():
    rec = run(load_config(os.path.join(CONFIGS, "sweep.ini")))
    assert len(rec.points) == 18
    assert rec.passed
    text, data = report([rec])
    assert len(data["sweep"]) == 18
    assert "C(v) against v - rho" in text


# ---------------------------------------------------------------- reports and CLI

def test_empty_report():
    text, data = report([])
    assert data["n_records"] == 0 and data["records"] == []
    json.dumps(data)
    assert "0 record(s)" in text
    assert exit_status([]) == 0


def _record(passed):
    rec = ExperimentRecord("growth", "0" * 64, 1, "")
    rec.checks.append(Check("slope", 0.1, 0.1 if passed else 0.5, 0.05, "slope", passed))
    return rec


def test_failing_record_sets_exit_status():
    assert exit_status([_record(True)]) == 0
    assert exit_status([_record(True), _record(False)]) == 1
    partial = _record(True)
    partial.partial = True
    assert exit_status([partial]) == 1
    text, data = report([_record(True), _record(False)])
    assert data["n_failed"] == 1 and "[FAIL] growth" in text


def test_non_finite_values_serialize():
    rec = _record(True)
    rec.summary = {"v_max": math.inf, "x": float("nan"), "n": np.int64(3)}
    d = json.loads(rec.to_json())
    assert d["summary"] == {"v_max": "inf", "x": "nan", "n": 3}


def test_cli_exit_codes(tmp_path, capsys):
    good = os.path.join(CONFIGS, "rates_uniform.ini")
    out = str(tmp_path / "out")
    assert cli.main(["rates", "--config", good, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "rates-table.json"))

    bad = tmp_path / "strict.ini"
    bad.write_text(SMALL_MARTINGALE + "\n[tolerances]\nn_se = 0\n")
    assert cli.main(["verify", "--config", str(bad), "--out", out]) == 1
    assert cli.main(["report", "--out", out]) == 1
    with open(os.path.join(out, "report.json")) as fh:
        assert json.load(fh)["n_records"] == 2

    broken = tmp_path / "broken.ini"
    broken.write_text("[experiment]\nkind = growth\nwhat = 1\n")
    assert cli.main(["verify", "--config", str(broken)]) == 2
    assert cli.main(["verify", "--config", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["simulate"]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_seed_override(tmp_path):
    path = tmp_path / "m.ini"
    path.write_text(SMALL_MARTINGALE)
    out = str(tmp_path / "o")
    cli.main(["verify", "--config", str(path), "--out", out, "--seed", "99"])
    assert read_record(os.path.join(out, "martingale-mean.json")).seed == 99
