import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_type
from hankwedge.calibration import CommonParams, PolicyRegime, ShockScenario, ar1_path, pooled_country
from hankwedge.household import household_jacobians
from hankwedge.solver import (SolverError, SolverOptions, assemble, clear_cache, residual, run_standard_twin,
                              shock_values, solve, solve_linear, solve_nonlinear, stack, unstack, walras_residual)

COMMON = CommonParams(n_a=60, a_max=100.0)
IS = SolverOptions(demand="is")


def _country(code="X", phi=0.0, trade=None):
    # the frequent resetter spends more on essentials
    c = two_type(0.3, 0.1, (0.35, 0.35, 0.3), (0.1, 0.3, 0.6), eta_h=0.4, phi=phi, code=code)
    return replace(c, trade_shares=trade or {})


def _scenario(T, peak=0.02, items=None, **policy):
    u = ar1_path(peak, 0.7, T)
    regime = PolicyRegime.constant(policy.pop("taylor_pi", 1.5), policy.pop("taylor_y", 0.125), T, **policy)
    if items == "uniform":
        return ShockScenario(u, regime, goods_path=u.copy(), services_path=u.copy())
    return ShockScenario(u, regime)


@pytest.fixture(scope="module")
def hh40():
    return household_jacobians(COMMON, 40)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def test_one_country_two_groups_dimension(hh40):
    system = assemble([_country()], COMMON, _scenario(40), hh=hh40)
    assert system.size == 160
    assert system.F_X.shape == (160, 160)
    assert len(system.unknowns) == len(system.targets) == 4


def test_zero_shock_gives_zero_response(hh40):
    sc = ShockScenario(np.zeros(40), PolicyRegime.constant(1.5, 0.125, 40))
    res = solve_linear([_country()], COMMON, sc, hh=hh40)
    for v in res.countries["X"].values():
        np.testing.assert_array_equal(v, 0.0)


@pytest.mark.parametrize("options", [IS, SolverOptions()], ids=["is", "hank"])
def test_dag_jacobian_matches_finite_differences(options):
    T = 10
    hh = household_jacobians(COMMON, T) if options.demand == "hank" else None
    sc = _scenario(T)
    system = assemble([_country(phi=0.35)], COMMON, sc, options, hh)
    Z = shock_values(system, sc)
    x0 = np.random.default_rng(1).normal(0, 0.01, system.size)
    f0 = residual(system, unstack(system, x0), Z)
    h = 1e-6
    fd = np.empty((system.size, system.size))
    for j in range(system.size):
        x = x0.copy()
        x[j] += h
        fd[:, j] = (residual(system, unstack(system, x), Z) - f0) / h
    np.testing.assert_allclose(system.F_X, fd, atol=1e-6)


def test_block_diagonal_without_trade_or_common_rate():
    T = 12
    cs = [_country("A"), _country("B")]
    sc = _scenario(T)
    sc = replace(sc, policy=replace(sc.policy, exogenous_rate=True))
    system = assemble(cs, COMMON, sc, IS)
    n = system.size // 2
    np.testing.assert_array_equal(system.F_X[:n, n:], 0.0)
    np.testing.assert_array_equal(system.F_X[n:, :n], 0.0)


def test_trade_couples_countries():
    T = 12
    cs = [_country("A", trade={"B": 0.3, "RW": 0.7}), _country("B", trade={"A": 0.3, "RW": 0.7})]
    sc = _scenario(T)
    sc = replace(sc, policy=replace(sc.policy, exogenous_rate=True))
    system = assemble(cs, COMMON, sc, IS)
    assert np.abs(system.F_X[: system.size // 2, system.size // 2:]).max() > 0


def test_determinacy_guard(hh40):
    system = assemble([_country()], COMMON, _scenario(40), hh=hh40)
    assert np.isfinite(system.rcond) and system.rcond > 1e-12
    with pytest.raises(SolverError, match="indeterminate"):
        assemble([_country()], COMMON, _scenario(40, taylor_pi=0.9), hh=hh40)


# ---------------------------------------------------------------------------
# linear solution
# ---------------------------------------------------------------------------


def test_essentials_shock_opens_positive_wedge(hh40):
    res = solve_linear([_country()], COMMON, _scenario(40), hh=hh40)
    assert res.countries["X"]["omega"][0] > 0


def test_uniform_shock_has_no_wedge_without_salience(hh40):
    common = replace(COMMON, lambda_e=1.0)
    res = solve_linear([_country()], common, _scenario(40, items="uniform"), hh=household_jacobians(common, 40))
    np.testing.assert_allclose(res.countries["X"]["omega"], 0.0, atol=1e-15)


def test_uniform_shock_wedge_scales_with_salience(hh40):
    # with salience the essentials part of a uniform shock still weighs more
    res = solve_linear([_country()], COMMON, _scenario(40, items="uniform"), hh=hh40)
    only_e = solve_linear([_country()], replace(COMMON, lambda_e=1.0), _scenario(40), hh=hh40)
    np.testing.assert_allclose(res.countries["X"]["omega"], (COMMON.lambda_e - 1.0) * only_e.countries["X"]["omega"],
                               atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3.0, 3.0).filter(lambda k: abs(k) > 1e-3))
def test_linear_scaling(hh40, k):
    base = solve_linear([_country()], COMMON, _scenario(40), hh=hh40)
    scaled = solve_linear([_country()], COMMON, _scenario(40).scaled(k), hh=hh40)
    for var, path in base.countries["X"].items():
        np.testing.assert_allclose(scaled.countries["X"][var], k * path, atol=1e-10)


def test_wedge_term_matches_omega(hh40):
    res = solve_linear([_country(phi=0.0)], COMMON, _scenario(40), hh=hh40)
    d = res.countries["X"]
    np.testing.assert_allclose(d["wedge_term"] / _country().theta_bar, d["omega"], atol=1e-9)


def test_walras_check(euro, euro_hh):
    from hankwedge.calibration import baseline_scenario

    countries, common = euro
    sc = baseline_scenario(common)
    system = assemble(countries, common, sc, hh=euro_hh)
    res = solve_linear(countries, common, sc, hh=euro_hh)
    assert walras_residual(system, res, sc) < 1e-8


# ---------------------------------------------------------------------------
# nonlinear solution
# ---------------------------------------------------------------------------


def test_nonlinear_without_catchup_equals_linear(hh40):
    sc = replace(_scenario(40, peak=0.08), nonlinear=True)
    common = replace(COMMON, b_catchup=0.0)
    lin = solve_linear([_country()], common, sc, hh=hh40)
    non = solve_nonlinear([_country()], common, sc, hh=hh40)
    for var, path in lin.countries["X"].items():
        np.testing.assert_allclose(non.countries["X"][var], path, atol=1e-6)


def test_nonlinear_solution_is_feasible(hh40):
    sc = replace(_scenario(40, peak=0.25), nonlinear=True)
    options = SolverOptions()
    res = solve([_country()], COMMON, sc, options, hh40)
    system = assemble([_country()], COMMON, sc, options, hh40)
    X = {f"X:w:{g.label}": res.countries["X"][f"w:{g.label}"] for g in _country().groups}
    X["X:p:services"] = res.countries["X"]["p_services"]
    X["X:p:goods"] = res.countries["X"]["p_goods"]
    H = residual(system, unstack(system, stack(system, X)), shock_values(system, sc), nonlinear=True)
    assert np.max(np.abs(H)) < 1e-3
    assert res.residual_norm < options.tol


def test_nonlinear_iteration_cap_reports_residual(hh40):
    sc = replace(_scenario(40, peak=0.25), nonlinear=True)
    with pytest.raises(SolverError) as info:
        # always-damped steps cannot converge in one iteration
        solve([_country()], COMMON, sc, SolverOptions(tol=1e-12, max_iter=1, damping_threshold=0.0), hh40)
    assert info.value.residual is not None and info.value.residual > 0


# ---------------------------------------------------------------------------
# standard twin
# ---------------------------------------------------------------------------


def test_twin_of_homogeneous_calibration_is_idempotent(hh40):
    pooled = pooled_country(_country(), COMMON.beta)
    sc = _scenario(40)
    twin = run_standard_twin([pooled], COMMON, sc, hh=hh40)
    direct = solve_linear([pooled], COMMON, sc, SolverOptions(catchup=0.0), hh40)
    for var, path in direct.countries["X"].items():
        np.testing.assert_allclose(twin.countries["X"][var], path, atol=1e-12)


def test_figure4_twin_has_no_wedge(figure4):
    country, common = figure4
    T = 40
    twin = run_standard_twin([country], common, _scenario(T), hh=household_jacobians(common, T))
    np.testing.assert_allclose(twin.countries[country.code]["omega"], 0.0, atol=1e-15)


def test_heterogeneity_gap_positive_for_essentials_shock(euro, euro_hh):
    from hankwedge.calibration import baseline_scenario
    from hankwedge.experiments import cumulative

    countries, common = euro
    sc = baseline_scenario(common)
    het = solve_linear(countries, common, sc, hh=euro_hh)
    std = run_standard_twin(countries, common, sc, hh=euro_hh)
    for c in countries:
        gap = cumulative(het.countries[c.code]["pi_core"]) - cumulative(std.countries[c.code]["pi_core"])
        assert gap > 0, c.code


def test_system_cache_reuses_factorization(hh40):
    clear_cache()
    a = assemble([_country()], COMMON, _scenario(40), hh=hh40)
    b = assemble([_country()], COMMON, _scenario(40, peak=0.05), hh=hh40)
    assert a is b
