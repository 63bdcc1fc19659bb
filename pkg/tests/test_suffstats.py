import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from hankwedge.calibration import CalibrationError
from hankwedge.suffstats import (IdentityError, as_dp, average_experienced, cumulative_decomposition,
                                 experienced_inflation, kappa_aggregate, mwsi, optimal_subsidy, propagation_weight,
                                 reset_weights, rwei, suffstats_rows, variance_decomposition, wedge,
                                 wedge_closed_form_2type, wedge_closing_subsidy, wedge_covariance)

from conftest import baskets, make_sectors, price_changes, two_type, two_type_countries

ESSENTIALS_40 = {"e": 0.40, "d": 0.0, "s": 0.0}


def test_figure4_experienced(figure4):
    country, _ = figure4
    np.testing.assert_allclose(experienced_inflation(country, ESSENTIALS_40, 1.0).values, [0.152, 0.072],
                               atol=1e-12)
    assert experienced_inflation(country, ESSENTIALS_40, 1.3).values[0] == pytest.approx(0.1976, abs=1e-12)


def test_figure4_reset_weights(figure4):
    country, _ = figure4
    weights, theta_bar = reset_weights(country)
    np.testing.assert_allclose(weights, [0.125 / 0.155, 0.03 / 0.155], atol=1e-12)
    assert theta_bar == pytest.approx(0.155, abs=1e-12)


def test_figure4_statistics(figure4):
    country, _ = figure4
    assert rwei(country, ESSENTIALS_40, 1.0) == pytest.approx(0.137, abs=5e-4)
    assert average_experienced(country, ESSENTIALS_40, 1.0) == pytest.approx(0.112, abs=1e-12)
    assert wedge(country, ESSENTIALS_40, 1.0) == pytest.approx(0.025, abs=5e-4)
    # closed form evaluated by hand: (0.25 / 0.155) * 0.19 * 0.20 * 0.40
    assert wedge_closed_form_2type(country, ESSENTIALS_40, 1.0) == pytest.approx(0.0245161, abs=1e-6)


def test_rwei_salience(figure4):
    country, _ = figure4
    expected = (0.125 / 0.155) * 0.1976 + (0.03 / 0.155) * 0.0936
    assert rwei(country, ESSENTIALS_40, 1.3) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1775, abs=1e-4)


def test_equal_thetas_give_population_weights():
    c = two_type(0.2, 0.2, (0.4, 0.3, 0.3), (0.2, 0.3, 0.5), eta_h=0.3)
    weights, _ = reset_weights(c)
    np.testing.assert_allclose(weights, [0.3, 0.7], atol=1e-15)


def test_propagation_weight_examples():
    s = make_sectors()["services"]
    s = replace(s, labor_share=0.5, centrality=0.5, calvo_reset=0.5)
    assert propagation_weight(s) == pytest.approx(0.5)
    assert propagation_weight(replace(s, labor_share=0.63, calvo_reset=0.25)) == pytest.approx(0.42)


def test_propagation_weight_monotone_in_labor_share():
    s = make_sectors()["services"]
    assert propagation_weight(replace(s, labor_share=0.7)) > propagation_weight(replace(s, labor_share=0.5))


def test_mwsi_figure4_hand_value(figure4):
    country, _ = figure4
    value = mwsi(country, ESSENTIALS_40, 1.0, nu={"services": 1.2, "goods": 0.8})
    hand = (0.8065 - 0.5) * 1.2 * 0.152 + (0.1935 - 0.5) * 0.8 * 0.072
    assert value == pytest.approx(hand, abs=1e-4)
    assert value == pytest.approx(0.0382, abs=1e-4)


def test_mwsi_homogeneous_weights_scale_wedge(figure4):
    country, _ = figure4
    assert mwsi(country, ESSENTIALS_40, 1.0, nu={"services": 0.7, "goods": 0.7}) == pytest.approx(
        0.7 * wedge(country, ESSENTIALS_40, 1.0), abs=1e-15)


def test_mwsi_zero_without_reset_heterogeneity():
    c = two_type(0.2, 0.2, (0.4, 0.3, 0.3), (0.2, 0.3, 0.5))
    assert mwsi(c, ESSENTIALS_40, 1.3) == pytest.approx(0.0, abs=1e-15)


def test_optimal_subsidy_hand_value():
    c = two_type(0.25, 0.06, (0.38, 0.217, 0.403), (0.18, 0.287, 0.533))
    assert optimal_subsidy(c, 0.025, 1.0) == pytest.approx(0.025 / (0.8065 * 0.20), abs=1e-3)
    assert optimal_subsidy(c, 0.025, 1.0) == pytest.approx(0.155, abs=1e-3)
    assert optimal_subsidy(c, 0.0, 1.0) == 0.0


def test_optimal_subsidy_needs_basket_gap():
    c = two_type(0.25, 0.06, (0.3, 0.3, 0.4), (0.3, 0.3, 0.4))
    with pytest.raises(CalibrationError):
        optimal_subsidy(c, 0.01, 1.0)


@given(two_type_countries(), price_changes(), st.floats(0.5, 2.0))
@settings(max_examples=200, deadline=None)
def test_wedge_closing_subsidy_zeroes_wedge(country, dp, lam):
    if abs(country.groups[0].alpha_e - country.groups[1].alpha_e) < 1e-3 or abs(
            country.groups[0].theta - country.groups[1].theta) < 1e-3:
        return
    omega = wedge(country, dp, lam)
    tau = wedge_closing_subsidy(country, omega, lam)
    assert wedge(country, dp - np.array([tau, 0.0, 0.0]), lam) == pytest.approx(0.0, abs=1e-12)


def test_cumulative_decomposition_hand_values():
    c = two_type(0.25, 0.06, (0.38, 0.217, 0.403), (0.18, 0.287, 0.533))
    dp = {"e": 0.40 * 0.025 / wedge(c, ESSENTIALS_40, 1.0), "d": 0.0, "s": 0.0}
    _, comp, demand = cumulative_decomposition(c, dp, 1.0, 0.99, 0.88)
    assert comp == pytest.approx(0.155 * 0.025 / (1 - 0.99 * 0.88), abs=1e-12)
    assert comp == pytest.approx(0.0301, abs=1e-4)
    assert demand == 0.0
    uniform = {"e": 0.1, "d": 0.1, "s": 0.1}
    assert cumulative_decomposition(c, uniform, 1.0, 0.99, 0.5)[1] == pytest.approx(0.0, abs=1e-15)


def test_kappa_aggregate_hand_values(figure4):
    single = two_type(0.25, 0.25, (0.3, 0.3, 0.4), (0.3, 0.3, 0.4))
    assert kappa_aggregate(single, 0.99) == pytest.approx(0.25 * (1 - 0.99 * 0.75) / 0.75, abs=1e-12)
    assert kappa_aggregate(single, 0.99) == pytest.approx(0.0858, abs=1e-4)
    country, _ = figure4
    hand = 0.5 * 0.25 * (1 - 0.99 * 0.75) / 0.75 + 0.5 * 0.06 * (1 - 0.99 * 0.94) / 0.94
    assert kappa_aggregate(country, 0.99) == pytest.approx(hand, abs=1e-12)
    assert kappa_aggregate(country, 0.99) == pytest.approx(0.0451, abs=1e-4)
    tiny = two_type(1e-6, 1e-6, (0.3, 0.3, 0.4), (0.3, 0.3, 0.4))
    assert kappa_aggregate(tiny, 0.99) < 1e-7


def test_variance_decomposition_hand_values():
    out = variance_decomposition([1.0, 2.0], [1.0, 1.0], [0.1, 0.3], [1.0, 1.0], 1.0)
    np.testing.assert_allclose(out, (0.25, 0.01, 0.10), atol=1e-15)
    zero = variance_decomposition([1.0, 2.0], [1.0, 1.0], [0.0, 0.0], [0.2, 0.3], 1.0)
    assert zero[1] == zero[2] == 0.0
    same = variance_decomposition([1.0, 1.0], [2.0, 2.0], [0.1, 0.1], [0.2, 0.2], 0.5)
    np.testing.assert_allclose(same, 0.0, atol=1e-15)


def test_as_dp_validation():
    with pytest.raises(CalibrationError):
        as_dp({"e": 0.1})
    with pytest.raises(CalibrationError):
        as_dp([0.1, 0.2])


def test_identity_guard_detects_mismatch(monkeypatch, figure4):
    import hankwedge.suffstats as ss

    country, _ = figure4
    monkeypatch.setattr(ss, "wedge_covariance", lambda *a: 1.0)
    with pytest.raises(IdentityError):
        ss.wedge(country, ESSENTIALS_40, 1.0)


def test_suffstats_rows_columns(figure4):
    country, _ = figure4
    (row,) = suffstats_rows([country], ESSENTIALS_40, 1.0)
    assert list(row) == ["country", "rwei", "avg_pi", "omega", "mwsi", "tau_star"]


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------


@given(two_type_countries(), price_changes(), st.floats(0.0, 2.0))
@settings(max_examples=300, deadline=None)
def test_wedge_forms_agree(country, dp, lam):
    direct = wedge(country, dp, lam, check=False)
    assert wedge_covariance(country, dp, lam) == pytest.approx(direct, abs=1e-12)
    assert wedge_closed_form_2type(country, dp, lam) == pytest.approx(direct, abs=1e-12)


@given(two_type_countries(), price_changes(), st.floats(0.0, 2.0))
@settings(max_examples=200, deadline=None)
def test_reset_weights_sum_to_one(country, dp, lam):
    weights, _ = reset_weights(country)
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert wedge(country, dp, lam) == pytest.approx(rwei(country, dp, lam) - average_experienced(country, dp, lam),
                                                    abs=1e-12)


@given(two_type_countries(), price_changes(), st.floats(-3.0, 3.0))
@settings(max_examples=200, deadline=None)
def test_wedge_scale_linearity(country, dp, k):
    assert wedge(country, k * dp, 1.3) == pytest.approx(k * wedge(country, dp, 1.3), abs=1e-12)


@given(two_type_countries(), st.floats(-0.5, 0.5))
@settings(max_examples=200, deadline=None)
def test_uniform_shock(country, x):
    dp = np.full(3, x)
    assert rwei(country, dp, 1.0) == pytest.approx(x, abs=1e-12)
    np.testing.assert_allclose(experienced_inflation(country, dp, 1.0).values, x, atol=1e-12)


@given(two_type_countries(), st.floats(-0.5, 0.5), st.floats(0.0, 2.0))
@settings(max_examples=200, deadline=None)
def test_uniform_shock_wedge_only_from_salience(country, x, lam):
    # a uniform change reaches groups as x (1 + (lam - 1) alpha_e), so only
    # the essentials salience can open a wedge
    expected = (lam - 1.0) * wedge(country, [x, 0.0, 0.0], 1.0)
    assert wedge(country, np.full(3, x), lam) == pytest.approx(expected, abs=1e-12)
    assert wedge(country, np.full(3, x), 1.0) == pytest.approx(0.0, abs=1e-12)


@given(two_type_countries(), st.floats(0.01, 0.5))
@settings(max_examples=200, deadline=None)
def test_necessity_shock_sign(country, x):
    h, l = country.groups
    if not (h.theta > l.theta + 1e-3 and h.alpha_e > l.alpha_e + 1e-3):
        return
    assert wedge(country, [x, 0.0, 0.0], 1.3) > 0.0
    # pushing only the other items moves the wedge the other way
    assert wedge(country, [0.0, x, x], 1.3) < 0.0
