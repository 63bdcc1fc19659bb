import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from hankwedge.household import (ConvergenceError, fake_news_jacobian, forward_step, lottery, rouwenhorst,
                                 solve_policy, solve_steady_state, stationary_distribution, transition)

FD_H = 1e-4


@pytest.fixture(scope="module")
def ss(euro):
    _, common = euro
    return solve_steady_state(common)


# ---------------------------------------------------------------------------
# income process
# ---------------------------------------------------------------------------


def test_rouwenhorst_two_state_closed_form():
    proc = rouwenhorst(0.966, 0.5, 2)
    np.testing.assert_allclose(proc.transition, [[0.983, 0.017], [0.017, 0.983]], atol=1e-12)


def test_rouwenhorst_iid_rows_equal():
    P = rouwenhorst(0.0, 0.3, 7).transition
    np.testing.assert_allclose(P, np.tile(P[0], (7, 1)), atol=1e-14)


def test_rouwenhorst_spread_matches_unconditional_sd():
    proc = rouwenhorst(0.9, 0.2, 7)
    sd = np.sqrt(proc.stationary @ proc.grid**2 - (proc.stationary @ proc.grid) ** 2)
    assert sd == pytest.approx(0.2 / np.sqrt(1 - 0.81), rel=1e-10)


def test_rouwenhorst_monte_carlo_autocorrelation():
    proc = rouwenhorst(0.966, 0.5, 7)
    rng = np.random.default_rng(20240)
    cum = np.cumsum(proc.transition, axis=1)
    n = 1_000_000
    u = rng.random(n)
    state = np.empty(n, dtype=int)
    state[0] = 3
    for t in range(1, n):
        state[t] = min(np.searchsorted(cum[state[t - 1]], u[t], side="right"), 6)
    x = proc.grid[state]
    rho_hat = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(rho_hat - 0.966) < 0.005


def test_rouwenhorst_rejects_bad_input():
    with pytest.raises(ValueError):
        rouwenhorst(0.5, 0.1, 1)
    with pytest.raises(ValueError):
        rouwenhorst(1.0, 0.1, 3)


@given(st.floats(-0.95, 0.95), st.integers(2, 9))
def test_rouwenhorst_is_stochastic_and_stationary(rho, n):
    proc = rouwenhorst(rho, 0.1, n)
    np.testing.assert_allclose(proc.transition.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(proc.stationary @ proc.transition, proc.stationary, atol=1e-12)
    assert proc.stationary @ proc.levels == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# steady state
# ---------------------------------------------------------------------------


def test_impact_mpc_in_band(ss):
    assert 0.02 <= ss.mpc() <= 0.06


def test_euler_residual(ss):
    res = ss.euler_residual()
    # savings clipped at the top of the grid face an upper constraint
    interior = (ss.a_next > 0.0) & (ss.a_next < ss.a_grid[-1])
    assert np.max(np.abs(res[interior])) < 1e-8
    assert np.all(res[~interior] >= -1e-8)


def test_constraint_binds_for_lowest_income(euro):
    _, common = euro
    hi = solve_steady_state(replace(common, sigma=8.0), r_ss=(1 - 1e-4) / common.beta - 1)
    assert hi.a_next[0, 0] == 0.0


def test_rejects_nonstationary_rate(euro):
    _, common = euro
    with pytest.raises(ValueError):
        solve_steady_state(common, r_ss=1.0 / common.beta - 1.0)


def test_distribution_nonconvergence_is_reported(ss):
    with pytest.raises(ConvergenceError):
        stationary_distribution(ss.a_next, ss.a_grid, ss.process.transition, ss.process.stationary, max_iter=2)


# Bellman oracle. With three asset points the discrete-choice program can only
# agree with EGM where the EGM choices sit on gridpoints. The toy puts the
# low-income state on the borrowing limit, the high-income state at the top of
# the grid from a = .4 and a = .5, and chooses beta so that the Euler equation
# holds with equality for the interior choice a' = .4 from a = 0, high income.
TOY_SIGMA, TOY_R = 2.0, 0.01
TOY_Y = np.array([0.5, 2.0])
TOY_PI = np.array([[0.3, 0.7], [0.5, 0.5]])
TOY_GRID = np.array([0.0, 0.4, 0.5])


def _toy_beta():
    up = lambda c: c ** (-TOY_SIGMA)
    a1, a2 = TOY_GRID[1], TOY_GRID[2]
    c_hi = (1 + TOY_R) * a1 + TOY_Y[1] - a2
    c_lo = (1 + TOY_R) * a1 + TOY_Y[0]
    return up(TOY_Y[1] - a1) / ((1 + TOY_R) * (TOY_PI[1, 1] * up(c_hi) + TOY_PI[1, 0] * up(c_lo)))


def _bellman(y, Pi, grid, beta, sigma, r, tol=1e-14):
    coh = (1 + r) * grid[None, :] + y[:, None]
    cons = coh[:, :, None] - grid[None, None, :]
    util = np.full(cons.shape, -np.inf)
    ok = cons > 0
    util[ok] = cons[ok] ** (1 - sigma) / (1 - sigma)
    V = np.zeros(coh.shape)
    while True:
        value = util + beta * (Pi @ V)[:, None, :]
        V_new = value.max(axis=2)
        if np.max(np.abs(V_new - V)) < tol:
            break
        V = V_new
    choice = grid[value.argmax(axis=2)]
    return coh - choice, choice


def test_egm_matches_exhaustive_bellman_toy():
    beta = _toy_beta()
    assert beta * (1 + TOY_R) < 1
    c, a_next, _ = solve_policy(TOY_Y, TOY_PI, TOY_GRID, beta, TOY_SIGMA, TOY_R, 1.0)
    c_dp, a_dp = _bellman(TOY_Y, TOY_PI, TOY_GRID, beta, TOY_SIGMA, TOY_R)
    np.testing.assert_allclose(a_next, a_dp, atol=1e-6)
    np.testing.assert_allclose(c, c_dp, atol=1e-6)
    assert a_next[1, 0] == pytest.approx(0.4, abs=1e-6)


# ---------------------------------------------------------------------------
# lottery and distribution
# ---------------------------------------------------------------------------


def test_lottery_mass_conservation_10k_steps(ss):
    rng = np.random.default_rng(7)
    D = rng.random(ss.D.shape)
    D /= D.sum()
    for _ in range(10_000):
        mass = D.sum()
        D = forward_step(D, ss.a_next, ss.a_grid, ss.process.transition)
        assert abs(D.sum() - mass) < 1e-14
    assert abs(D.sum() - 1.0) < 1e-12


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 60.0), min_size=1, max_size=20))
def test_lottery_locality(values):
    grid = np.linspace(0.0, 50.0, 11)
    a = np.clip(np.array(values), grid[0], grid[-1])
    idx, w = lottery(a, grid)
    assert np.all((w >= 0) & (w <= 1))
    assert np.all((grid[idx] <= a + 1e-12) & (a <= grid[idx + 1] + 1e-12))
    np.testing.assert_allclose(w * grid[idx] + (1 - w) * grid[idx + 1], a, atol=1e-10)


def test_stationary_distribution_is_fixed_point(ss):
    D_next = forward_step(ss.D, ss.a_next, ss.a_grid, ss.process.transition)
    assert np.abs(D_next - ss.D).sum() < 1e-10
    assert ss.D.sum() == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


def _fd_jacobian(ss, input, T):
    base = transition(ss, T=T)["C"]
    steady = {"r": ss.r, "w": ss.w, "transfer": 0.0}[input]
    J = np.empty((T, T))
    for s in range(T):
        path = np.full(T, steady)
        path[s] += FD_H
        J[:, s] = (transition(ss, T=T, **{input: path})["C"] - base) / FD_H
    return J


@pytest.mark.parametrize("input", ["r", "w"])
def test_fake_news_matches_finite_differences(ss, input):
    T = 30
    J = fake_news_jacobian(ss, input, "C", T)
    J_fd = _fd_jacobian(ss, input, T)
    assert np.max(np.abs(J - J_fd)) < 1e-4


def test_transfer_budget_identity(ss):
    J_A = fake_news_jacobian(ss, "transfer", "A", 5)
    assert J_A[0, 0] == pytest.approx(1.0 - ss.mpc(), abs=1e-6)


def test_rate_response_on_impact_is_negative(ss):
    J = fake_news_jacobian(ss, "r", "C", 20)
    assert np.all(J[0] < 0)


def test_jacobian_asymptotic_time_invariance(euro_hh):
    J = euro_hh[("C", "r")]
    T = J.shape[0]
    k = int(np.ceil(2 * T / 3))
    # the last column has no successor: a rate set in T - 1 is credited after the horizon
    assert np.max(np.abs(J[k:-2, k:-2] - J[k + 1:-1, k + 1:-1])) < 1e-6


def test_unknown_labels(ss):
    with pytest.raises(ValueError):
        fake_news_jacobian(ss, "tax", "C", 5)
    with pytest.raises(ValueError):
        fake_news_jacobian(ss, "r", "Y", 5)


def test_rate_jacobian_offsets_interest_income(euro_hh):
    # taxing back the interest cost removes the income effect of a rate change
    J_r = euro_hh[("C", "r")]
    J_net = euro_hh.rate_jacobian
    assert abs(J_net[:, 0].sum()) < abs(J_r[:, 0].sum())
