import csv
import json
import math

import numpy as np
import pytest

from normrecon import harness
from normrecon.bounds import ParameterError
from normrecon.harness import (ROW_COLUMNS, DegenerateFit, ScenarioAborted, ScenarioConfig, default_config,
                               dump_config, fit_slope, load_config, parse_assignments, run_scenario)


def small(scenario, **kw):
    base = dict(n=8, m=8, trials=2, iterations=300, restarts=1)
    base.update(kw)
    return default_config(scenario, **base)


def test_fit_slope_inverse_s_exact():
    rows = [(s, 3.0 / s) for s in (10, 20, 40, 80)]
    slope, se, r2 = fit_slope(rows)
    assert slope == pytest.approx(-1.0, abs=1e-12) and r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_slope_inverse_sqrt():
    slope, _, _ = fit_slope({s: {"mean": 2.0 / math.sqrt(s)} for s in (100, 400, 1600)})
    assert slope == pytest.approx(-0.5, abs=1e-12)


def test_fit_slope_log_cubed_curve():
    # the local slope 3/log(s) - 1 runs from -0.35 to -0.67 over this range,
    # so the least-squares slope sits near -0.55
    grid = np.geomspace(1e2, 1e4, 9)
    vals = [0.1 * math.log(s) ** 3 / s for s in grid]
    slope, _, _ = fit_slope(list(zip(grid, vals)))
    assert slope == pytest.approx(np.polyfit(np.log(grid), np.log(vals), 1)[0], abs=1e-12)
    assert -1.0 < slope < -0.5


def test_fit_slope_averages_repeated_s_and_applies_floor():
    rows = [(10, 1.0), (10, 3.0), (20, 1.0), (40, 0.5), (80, 1e-9)]
    slope, _, _ = fit_slope(rows, floor=1e-5)
    ref = np.polyfit(np.log([10, 20, 40]), np.log([2.0, 1.0, 0.5]), 1)[0]
    assert slope == pytest.approx(ref, abs=1e-12)


def test_fit_slope_degenerate():
    with pytest.raises(DegenerateFit):
        fit_slope([(10, 1.0), (20, 0.5), (40, 0.0)], floor=1e-5)
    with pytest.raises(DegenerateFit):
        fit_slope([(10, 1.0), (10, 2.0)])


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig("scaling_l1", s_grid=(100, 100, 200))
    with pytest.raises(ValueError):
        ScenarioConfig("scaling_l1", trials=0)


def test_parse_assignments_and_overrides(tmp_path):
    vals = parse_assignments(["n = 12  # rows", "", "s_grid = 10, 20, 40", "noise=gaussian", "sigma=0.5"])
    assert vals == {"n": 12, "s_grid": (10, 20, 40), "noise": "gaussian", "sigma": 0.5}
    path = tmp_path / "cfg.txt"
    path.write_text("n = 12\nm = 10\ntrials = 3\n")
    cfg = load_config("recovery", str(path), ["trials=5"])
    assert (cfg.n, cfg.m, cfg.trials) == (12, 10, 5)
    assert cfg.noise == "gaussian" and cfg.sigma == 0.5
    with pytest.raises(ParameterError):
        parse_assignments(["no equals sign"])
    with pytest.raises(ParameterError):
        load_config("recovery", None, ["scenario=spiky"])


def test_dump_config_roundtrip():
    cfg = small("scaling_l2", s_grid=(10, 20, 40), sigma=0.25)
    back = load_config("scaling_l2", None, dump_config(cfg).splitlines())
    assert back == cfg


def test_radii_follow_constraint_defaults():
    cfg = default_config("scaling_l1", n=48, m=48, r=2)
    assert cfg.radius("max") == pytest.approx(math.sqrt(2))
    assert cfg.radius("trace") == pytest.approx(math.sqrt(2 * 48 * 48))


def test_reproducible_rows_and_csv(tmp_path):
    cfg = small("scaling_l1", s_grid=(16, 32, 64), out_dir=str(tmp_path))
    a, b = run_scenario(cfg), run_scenario(cfg)
    assert a.rows == b.rows
    assert len(a.records) == len(cfg.grid) * cfg.trials
    with open(tmp_path / "scaling_l1_rows.csv") as fh:
        reader = csv.reader(fh)
        assert tuple(next(reader)) == ROW_COLUMNS
        body = list(reader)
    assert len(body) == len(a.rows)
    assert [(int(r[4]), int(r[5])) for r in body] == sorted((int(r[4]), int(r[5])) for r in body)
    rep = json.loads((tmp_path / "scaling_l1_report.json").read_text())
    assert rep["radii"]["A"] == pytest.approx(math.sqrt(2)) and rep["claim"]
    assert set(rep["assertions"]) >= {"slope_band", "excess_nonnegative"}


def test_noiseless_full_observation_excess_at_solver_tolerance():
    cfg = small("scaling_l1", noise="none", s_grid=(16, 32, 64), mode="without_replacement",
                iterations=2000, trials=1)
    rep = run_scenario(cfg)
    assert rep.aggregates["excess_l1"][64]["mean"] <= 1e-3


def test_scaling_l2_noise_precondition_failure():
    cfg = small("scaling_l2", noise="gaussian", sigma=50.0, strict_noise=True, s_grid=(16, 32, 64))
    with pytest.raises(ParameterError):
        run_scenario(cfg)


def test_failures_recorded_then_abort(monkeypatch):
    real = harness.fit
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] % every == 0:
            raise RuntimeError("solver blew up")
        return real(*a, **k)

    cfg = small("scaling_l1", s_grid=(16, 32, 64, 128, 256), trials=2, iterations=50)
    every = 10  # 1 of 10 fails: recorded, scenario continues
    monkeypatch.setattr(harness, "fit", flaky)
    rep = run_scenario(cfg)
    assert rep.summary()["failures"] == 1 and len(rep.records) == 10
    every, calls["n"] = 3, 0  # 3 of 10 fail: above the 20% cap
    with pytest.raises(ScenarioAborted):
        run_scenario(cfg)


def test_recovery_without_noise_reaches_tolerance():
    cfg = small("recovery", sigma=0.0, noise="none", s_grid=(32, 64, 256), iterations=1500, arms=("with",),
                trials=1)
    rep = run_scenario(cfg)
    assert rep.aggregates["mse_with"][256]["mean"] <= 1e-3


def test_spiky_and_replacement_small_runs():
    rep = run_scenario(small("spiky", n=8, m=8, trials=2))
    assert rep.aggregates["mse_observed"][32]["mean"] <= 1e-4
    assert rep.aggregates["mse_full"][32]["mean"] >= 0.4
    rep = run_scenario(small("replacement", n=6, m=6, trials=3))
    assert "without_not_worse" in rep.assertions
    assert rep.appendix["tiny_universe"]["violations"]["expectation"] == 0


def test_unknown_scenario():
    with pytest.raises(ParameterError):
        default_config("nonexistent")
