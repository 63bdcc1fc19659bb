import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hankwedge.calibration import (CalibrationError, CommonParams, Indexation, PolicyRegime, ShockScenario,
                                   ar1_path, baseline_scenario, bundled_path, load_scenario, load_union,
                                   pooled_country, regroup, reset_prob_from_duration, save_union,
                                   scenario_from_dict, sector_centrality, union_weights)


def test_euroarea_bundle_shape(euro):
    countries, common = euro
    assert [c.code for c in countries] == ["DE", "FR", "IT", "ES", "NL", "BE"]
    assert all(len(c.groups) == 5 for c in countries)
    assert countries[0].gdp_weight == pytest.approx(0.29)
    assert union_weights(countries).sum() == pytest.approx(1.0, abs=1e-12)
    assert common.horizon_T >= 80


def test_figure4_bundle(figure4):
    country, common = figure4
    h, l = country.groups
    assert (h.alpha_e, h.theta, l.alpha_e, l.theta) == (0.38, 0.25, 0.18, 0.06)
    assert h.eta == l.eta == 0.5
    assert common.lambda_e == 1.0


def test_share_sum_error_names_group(tmp_path, figure4):
    src = bundled_path("figure4")
    dst = tmp_path / "bad"
    shutil.copytree(src, dst)
    groups = next(dst.rglob("groups.csv"))
    text = groups.read_text().splitlines()
    header, row = text[0].split(","), text[1].split(",")
    row[header.index("alpha_s")] = str(float(row[header.index("alpha_s")]) - 0.1)
    groups.write_text("\n".join([text[0], ",".join(row)] + text[2:]) + "\n")
    with pytest.raises(CalibrationError, match="group 'H'.*sum to"):
        load_union(dst)


def test_missing_directory():
    with pytest.raises(FileNotFoundError):
        load_union("/nonexistent/calibration")


def test_unknown_common_key(tmp_path):
    shutil.copytree(bundled_path("figure4"), tmp_path / "c")
    path = tmp_path / "c" / "common.json"
    data = json.loads(path.read_text())
    data["gamma_typo"] = 1.0
    path.write_text(json.dumps(data))
    with pytest.raises(CalibrationError, match="unknown keys"):
        load_union(tmp_path / "c")


def test_save_load_roundtrip(tmp_path, euro):
    countries, common = euro
    save_union(countries, common, tmp_path / "u")
    again, common2 = load_union(tmp_path / "u")
    assert common2 == common
    assert [c.groups for c in again] == [c.groups for c in countries]


@pytest.mark.parametrize("quarters, expected", [(4, 0.25), (1, 0.999), (8.4, 0.119)])
def test_reset_prob_from_duration(quarters, expected):
    assert reset_prob_from_duration(quarters) == pytest.approx(expected, abs=5e-4)


def test_reset_prob_rejects_nonpositive():
    with pytest.raises(CalibrationError):
        reset_prob_from_duration(0.0)


def test_centrality_symmetric_io():
    io = {"services": {"services": 0.5, "goods": 0.5}, "goods": {"services": 0.5, "goods": 0.5}}
    assert sector_centrality(io) == pytest.approx({"services": 0.5, "goods": 0.5})


def test_centrality_is_left_eigenvector():
    io = {"services": {"services": 0.5, "goods": 0.3}, "goods": {"services": 0.3, "goods": 0.4}}
    v = np.array(list(sector_centrality(io).values()))
    m = np.array([[0.5, 0.3], [0.3, 0.4]])
    lam = np.max(np.linalg.eigvals(m).real)
    np.testing.assert_allclose(v @ m, lam * v, atol=1e-12)


def test_validation_rejects_out_of_range():
    with pytest.raises(CalibrationError):
        CommonParams(beta=1.0).validate()
    with pytest.raises(CalibrationError):
        CommonParams(horizon_T=40).validate()


def test_pooled_country_is_single_group(euro):
    countries, common = euro
    pooled = pooled_country(countries[0], common.beta)
    (g,) = pooled.groups
    assert g.theta == pytest.approx(countries[0].theta_bar)
    np.testing.assert_allclose(g.alpha(), countries[0].eta @ countries[0].alpha, atol=1e-15)
    assert g.phi == 0.0


@pytest.mark.parametrize("n", [2, 3, 5])
def test_regroup_preserves_means(euro, n):
    c = euro[0][0]
    r = regroup(c, n)
    assert len(r.groups) == n
    assert r.eta.sum() == pytest.approx(1.0, abs=1e-12)
    assert r.theta_bar == pytest.approx(c.theta_bar, abs=1e-12)
    np.testing.assert_allclose(r.eta @ r.alpha, c.eta @ c.alpha, atol=1e-12)


@given(st.floats(0.05, 0.95), st.integers(0, 8), st.floats(0.01, 1.0))
@settings(max_examples=60, deadline=None)
def test_ar1_path_peak(rho, quarter, peak):
    if quarter and quarter >= -1.0 / np.log(rho):
        with pytest.raises(CalibrationError, match="cannot peak"):
            ar1_path(peak, rho, 200, quarter)
        return
    path = ar1_path(peak, rho, 200, quarter)
    assert path.max() == pytest.approx(peak, rel=1e-12)
    if quarter and rho > 0.2:
        assert abs(int(np.argmax(path)) - quarter) <= 1


def test_ar1_hump_needs_persistence():
    assert ar1_path(0.1, 0.0, 10)[0] == 0.1
    with pytest.raises(CalibrationError):
        ar1_path(0.1, 0.0, 10, peak_quarter=2)


def test_scenario_validation_horizon():
    u = np.full(120, 0.01)
    sc = ShockScenario(u, PolicyRegime.constant(1.5, 0.125, 120))
    with pytest.raises(CalibrationError, match="decayed"):
        sc.validate()


def test_scenario_from_dict_delay():
    common = CommonParams()
    sc = scenario_from_dict({"shock": {"peak": 0.12, "peak_quarter": 4},
                             "policy": {"taylor_pi": 2.0, "delay_quarters": 5}}, common)
    np.testing.assert_array_equal(sc.policy.taylor_pi_path[:5], 0.0)
    np.testing.assert_array_equal(sc.policy.taylor_pi_path[5:], 2.0)
    assert sc.essentials_path.max() == pytest.approx(0.03)


def test_bundled_scenarios_load(euro):
    _, common = euro
    for path in sorted(bundled_path("scenarios").glob("*.json")):
        load_scenario(path, common)


def test_baseline_is_annualized_peak():
    sc = baseline_scenario(CommonParams(), peak=0.2)
    assert sc.essentials_path.max() == pytest.approx(0.05)


def test_indexation_validation():
    with pytest.raises(CalibrationError):
        Indexation("wage", 1.0).validate()
    with pytest.raises(CalibrationError):
        Indexation("cpi", 1.5).validate()
