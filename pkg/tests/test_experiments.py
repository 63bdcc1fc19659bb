import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hankwedge.calibration import CalibrationError, CommonParams, baseline_scenario
from hankwedge.experiments import (EXPERIMENTS, ExperimentReport, _projection, cumulative, directory_digest,
                                   half_life, persistence, policy_regimes, portability_stats, predicted_gap,
                                   run_experiment, scenario_digest, shock_scenarios)


def test_cumulative_window_and_target():
    path = np.arange(10.0)
    assert cumulative(path, 4) == 6.0
    assert cumulative(path, 4, target=1.0) == 2.0


def test_half_life():
    assert half_life(np.array([0.0, 1.0, 0.8, 0.5, 0.1])) == 3
    assert half_life(np.array([1.0, 0.9, 0.8])) == -1
    assert half_life(np.zeros(4)) == 0


@given(st.floats(-0.95, 0.95))
def test_persistence_recovers_ar1_coefficient(rho):
    path = rho ** np.arange(30.0)
    assert persistence(path) == pytest.approx(rho, abs=1e-9)


def test_projection_splits_variance():
    rng = np.random.default_rng(2)
    r, w = rng.normal(size=(2, 50))
    y = 2.0 * r + 0.5 * w
    comp_r, comp_w, resid = _projection(y, r, w)
    assert comp_r + comp_w == pytest.approx(np.var(y), rel=1e-10)
    assert resid == pytest.approx(0.0, abs=1e-12)
    assert _projection(np.ones(5), r[:5], w[:5]) == (0.0, 0.0, 0.0)


def test_predicted_gap_is_linear():
    assert predicted_gap(5.4, 0.5) == pytest.approx(2.7)


def test_policy_regimes():
    common = CommonParams()
    reg = policy_regimes(common, 20)
    assert set(reg) == {"a", "b", "c", "d"}
    assert reg["a"].taylor_pi_path[0] == 2.5
    assert all(reg[k].taylor_pi_path[0] == 1.5 for k in "bcd")
    assert reg["b"].transfer.kind == "uniform" and reg["c"].transfer.kind == "targeted"
    assert reg["c"].transfer.amount == reg["b"].transfer.amount
    assert reg["d"].subsidy == 0.06


def test_shock_scenarios_uniform_equalizes_salient_changes():
    common = CommonParams()
    sc = shock_scenarios(common)
    items = sc["uniform"].item_paths()
    np.testing.assert_allclose(common.lambda_e * items[0], items[1])
    np.testing.assert_allclose(items[1], items[2])
    assert not sc["non_essentials"].item_paths()[0].any()
    np.testing.assert_allclose(sc["food"].essentials_path, 0.75 * sc["energy"].essentials_path)


def test_portability_stats_bundled():
    rep = portability_stats()
    by = {r["country"]: r for r in rep.rows}
    assert {"UK", "US", "JP", "EA"} <= set(by)
    for r in rep.rows:
        assert r["rwei_index"] == pytest.approx(10.0 * r["omega_pp"])
        assert r["predicted_gap_pp"] == pytest.approx(5.4 * r["omega_pp"])


def test_portability_stats_custom_file(tmp_path):
    path = tmp_path / "portability.csv"
    path.write_text("country,essentials_q1_pct,essentials_q5_pct,theta_gap\nAA,30,20,0.1\nBB,30,20,0.2\n")
    by = {r["country"]: r for r in portability_stats(tmp_path).rows}
    assert by["BB"]["omega_pp"] == pytest.approx(2.0 * by["AA"]["omega_pp"])


def test_portability_stats_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        portability_stats(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("country,x\nAA,1\n")
    with pytest.raises(CalibrationError):
        portability_stats(bad)


def test_report_serialization(tmp_path):
    rep = ExperimentReport("demo", [{"a": 1, "b": np.float64(0.5)}, {"a": 2, "c": "x"}], {"k": np.arange(2)})
    rep.to_csv(tmp_path / "demo.csv")
    rep.to_json(tmp_path / "demo.json")
    with (tmp_path / "demo.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["a", "b", "c"] and rows[1]["c"] == "x"
    assert json.loads((tmp_path / "demo.json").read_text())["summary"]["k"] == [0, 1]


def test_run_experiment_writes_outputs_and_stable_manifest(tmp_path):
    run_experiment("portability-stats", tmp_path)
    first = (tmp_path / "manifest.json").read_text()
    csv_first = (tmp_path / "portability_stats.csv").read_bytes()
    run_experiment("portability-stats", tmp_path)
    assert (tmp_path / "manifest.json").read_text() == first
    assert (tmp_path / "portability_stats.csv").read_bytes() == csv_first
    entry = json.loads(first)["portability_stats"]
    assert {"calibration", "calibration_hash", "scenario_hash", "solver"} <= set(entry)


def test_run_experiment_unknown_name(tmp_path):
    with pytest.raises(KeyError):
        run_experiment("no-such-experiment", tmp_path)


def test_registry_names():
    assert {"wedge-table", "policy-matrix", "delayed-policy", "amplification-curve", "portability-stats",
            "estimate-psi", "oca-decomposition", "channel-decomposition", "shock-composition",
            "indexation-table", "same-openness"} == set(EXPERIMENTS)


def test_digests(tmp_path):
    (tmp_path / "a.txt").write_text("1")
    d1 = directory_digest(tmp_path)
    (tmp_path / "a.txt").write_text("2")
    assert directory_digest(tmp_path) != d1
    common = CommonParams()
    assert scenario_digest(baseline_scenario(common)) == scenario_digest(baseline_scenario(common))
    assert scenario_digest(baseline_scenario(common)) != scenario_digest(baseline_scenario(common, peak=0.1))
    assert scenario_digest(None) == "default"
