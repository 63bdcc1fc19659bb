"""Closed-form statistics of reset heterogeneity.

All functions take item price changes ``dp`` as a mapping with keys
``e`` (essentials), ``d`` (domestic goods) and ``s`` (services), or as a
length-3 array in that order. Nothing here solves an equilibrium.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .calibration import ITEMS, CalibrationError, CountryCalibration, wage_slope

IDENTITY_TOL = 1e-12


class IdentityError(ArithmeticError):
    """Two algebraically equal routes to the same statistic disagree."""


def as_dp(dp: Mapping[str, float] | Sequence[float] | np.ndarray) -> np.ndarray:
    """Item price changes as an array ordered e, d, s."""
    if isinstance(dp, Mapping):
        missing = [i for i in ITEMS if i not in dp]
        if missing:
            raise CalibrationError(f"price change missing items {missing}")
        return np.array([float(dp[i]) for i in ITEMS])
    arr = np.asarray(dp, dtype=float)
    if arr.shape[0] != 3:
        raise CalibrationError(f"price change needs 3 items, got shape {arr.shape}")
    return arr


def salience(lambda_e: float) -> np.ndarray:
    return np.array([lambda_e, 1.0, 1.0])


@dataclass(frozen=True)
class ExperiencedInflation:
    """Per-group salient experienced inflation and the price changes behind it."""

    values: np.ndarray
    dp: np.ndarray
    lambda_e: float


@dataclass(frozen=True)
class SufficientStats:
    rwei: float
    avg_pi: float
    omega: float
    mwsi: float
    reset_weights: np.ndarray
    theta_bar: float
    nu: dict


def experienced_inflation(country: CountryCalibration, dp, lambda_e: float) -> ExperiencedInflation:
    """Salience-weighted inflation each group experiences.

    ``pi_g = sum_i lambda_i alpha_{g,i} dp_i`` with weight ``lambda_e`` on
    essentials and one on the other items. ``dp`` may also be a ``(3, T)``
    array of paths, in which case the result is ``(G, T)``.
    """
    dpv = as_dp(dp)
    weighted = country.alpha * salience(lambda_e)
    return ExperiencedInflation(weighted @ dpv, dpv, float(lambda_e))


def reset_weights(country: CountryCalibration) -> tuple[np.ndarray, float]:
    """Share of aggregate wage resets made by each group, and the mean reset rate.

    Returns
    -------
    weights : ndarray
        ``eta_g theta_g / theta_bar``.
    theta_bar : float
        ``sum_g eta_g theta_g``.
    """
    eta, theta = country.eta, country.theta
    theta_bar = float(eta @ theta)
    return eta * theta / theta_bar, theta_bar


def rwei(country: CountryCalibration, dp, lambda_e: float):
    """Reset-weighted experienced inflation."""
    weights, _ = reset_weights(country)
    return weights @ experienced_inflation(country, dp, lambda_e).values


def average_experienced(country: CountryCalibration, dp, lambda_e: float):
    """Population-weighted experienced inflation."""
    return country.eta @ experienced_inflation(country, dp, lambda_e).values


def wedge_covariance(country: CountryCalibration, dp, lambda_e: float):
    """Wedge in covariance form, ``Cov_eta(theta, pi_exp) / theta_bar``."""
    eta, theta = country.eta, country.theta
    pi = experienced_inflation(country, dp, lambda_e).values
    theta_bar = float(eta @ theta)
    centred = theta - theta_bar
    pi_bar = eta @ pi
    return (eta * centred) @ (pi - pi_bar) / theta_bar


def wedge(country: CountryCalibration, dp, lambda_e: float, check: bool = True):
    """Reset-heterogeneity wedge ``RWEI - average experienced inflation``.

    The covariance form is evaluated alongside and the two must agree to
    ``1e-12`` (relative to the size of the inputs); a mismatch raises
    :class:`IdentityError`.
    """
    direct = rwei(country, dp, lambda_e) - average_experienced(country, dp, lambda_e)
    if check:
        cov = wedge_covariance(country, dp, lambda_e)
        scale = 1.0 + np.max(np.abs(as_dp(dp)))
        if np.max(np.abs(np.asarray(direct - cov))) > IDENTITY_TOL * scale:
            raise IdentityError(f"direct wedge {direct} != covariance form {cov}")
    return direct


def wedge_closed_form_2type(country: CountryCalibration, dp, lambda_e: float):
    """Two-type wedge written in terms of the basket and reset gaps.

    ``(eta_H eta_L / theta_bar) (theta_H - theta_L) sum_i lambda_i (alpha_Hi - alpha_Li) dp_i``.
    """
    if len(country.groups) != 2:
        raise CalibrationError(f"closed form needs exactly 2 groups, got {len(country.groups)}")
    h, l = country.groups
    theta_bar = h.eta * h.theta + l.eta * l.theta
    gap = (h.alpha() - l.alpha()) * salience(lambda_e)
    return (h.eta * l.eta / theta_bar) * (h.theta - l.theta) * (gap @ as_dp(dp))


def propagation_weight(sector) -> float:
    """Sector propagation weight: labor share x centrality / sector reset probability."""
    if not (sector.calvo_reset < 1.0):
        raise CalibrationError(f"sector {sector.name!r}: calvo_reset must be < 1")
    return sector.labor_share * sector.centrality / (1.0 - sector.calvo_reset)


def propagation_weights(country: CountryCalibration) -> dict:
    return {name: propagation_weight(s) for name, s in country.sectors.items()}


def mwsi(country: CountryCalibration, dp, lambda_e: float, nu: Mapping[str, float] | None = None):
    """Marginal wage-setter inflation.

    ``sum_g (omega_reset_g - eta_g) nu_{s(g)} pi_exp_g``; ``nu`` defaults to
    the country's propagation weights.
    """
    nu = propagation_weights(country) if nu is None else nu
    weights, _ = reset_weights(country)
    nu_g = np.array([nu[g.sector] for g in country.groups])
    pi = experienced_inflation(country, dp, lambda_e).values
    return ((weights - country.eta) * nu_g) @ pi


def extreme_pair(country: CountryCalibration) -> tuple[int, int]:
    """Indices of the groups with the largest and smallest reset weight."""
    weights, _ = reset_weights(country)
    return int(np.argmax(weights)), int(np.argmin(weights))


def optimal_subsidy(country: CountryCalibration, omega: float, lambda_e: float) -> float:
    """Essentials subsidy that closes the wedge.

    ``tau = Omega / (omega_reset_H (alpha_He - alpha_Le) lambda_e)`` using
    the groups with the largest and smallest reset weight.
    """
    if omega == 0.0:
        return 0.0
    hi, lo = extreme_pair(country)
    weights, _ = reset_weights(country)
    gap = country.groups[hi].alpha_e - country.groups[lo].alpha_e
    if abs(gap) < 1e-15 or lambda_e == 0.0:
        raise CalibrationError("essentials shares do not differ; a subsidy cannot close the wedge")
    return omega / (weights[hi] * gap * lambda_e)


def wedge_closing_subsidy(country: CountryCalibration, omega: float, lambda_e: float) -> float:
    """Essentials subsidy that sets the wedge exactly to zero.

    The wedge is linear in the essentials price change with slope
    ``lambda_e sum_g (omega_reset_g - eta_g) alpha_ge``, so the subsidy is
    ``Omega`` divided by that slope. For two groups the slope equals
    ``lambda_e (omega_reset_H - eta_H)(alpha_He - alpha_Le)``, which differs
    from the denominator of :func:`optimal_subsidy` by ``eta_H``.
    """
    if omega == 0.0:
        return 0.0
    weights, _ = reset_weights(country)
    alpha_e = np.array([g.alpha_e for g in country.groups])
    slope = lambda_e * float((weights - country.eta) @ alpha_e)
    if abs(slope) < 1e-15:
        raise CalibrationError("the wedge does not respond to the essentials price; no subsidy closes it")
    return omega / slope


def kappa_aggregate(country: CountryCalibration, beta: float) -> float:
    """Aggregate wage Phillips-curve slope ``sum_g eta_g theta_g (1 - beta Theta_g) / Theta_g``."""
    return float(sum(g.eta * wage_slope(g, beta) for g in country.groups))


def cumulative_decomposition(country: CountryCalibration, dp, lambda_e: float, beta: float,
                             wedge_persistence: float, avg_gap: float = 0.0) -> tuple[float, float, float]:
    """Cumulative wage response split into level, composition and demand channels.

    Returns
    -------
    tuple
        ``theta_bar pi_bar / (1 - beta)``,
        ``theta_bar Omega_0 / (1 - beta rho)`` and
        ``kappa x_bar / (1 - beta)``.
    """
    if not (0.0 <= wedge_persistence < 1.0):
        raise CalibrationError(f"wedge persistence {wedge_persistence} outside [0, 1)")
    _, theta_bar = reset_weights(country)
    pi_bar = float(average_experienced(country, dp, lambda_e))
    omega0 = float(wedge(country, dp, lambda_e))
    level = theta_bar * pi_bar / (1.0 - beta)
    composition = theta_bar * omega0 / (1.0 - beta * wedge_persistence)
    demand = kappa_aggregate(country, beta) * avg_gap / (1.0 - beta)
    return level, composition, demand


def weighted_moments(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    w = w / w.sum()
    mx, my = w @ x, w @ y
    return float(w @ (x - mx) ** 2), float(w @ (y - my) ** 2), float(w @ ((x - mx) * (y - my)))


def variance_decomposition(R: Sequence[float], S: Sequence[float], omega: Sequence[float],
                           theta_bar: Sequence[float], u: float,
                           weights: Sequence[float] | None = None) -> tuple[float, float, float]:
    """Cross-country variance of cumulative core inflation by channel.

    Returns ``(Var(R u), Var(S theta_bar Omega u), 2 Cov(R, S theta_bar Omega) u^2)``
    with GDP-weighted moments.
    """
    R = np.asarray(R, float)
    if R.size < 2:
        raise CalibrationError("variance decomposition needs at least two countries")
    comp = np.asarray(S, float) * np.asarray(theta_bar, float) * np.asarray(omega, float)
    w = np.ones_like(R) if weights is None else np.asarray(weights, float)
    var_r, var_c, cov = weighted_moments(R, comp, w)
    return var_r * u * u, var_c * u * u, 2.0 * cov * u * u


def summary(country: CountryCalibration, dp, lambda_e: float) -> SufficientStats:
    weights, theta_bar = reset_weights(country)
    om = float(wedge(country, dp, lambda_e))
    return SufficientStats(
        rwei=float(rwei(country, dp, lambda_e)),
        avg_pi=float(average_experienced(country, dp, lambda_e)),
        omega=om,
        mwsi=float(mwsi(country, dp, lambda_e)),
        reset_weights=weights,
        theta_bar=theta_bar,
        nu=propagation_weights(country),
    )


def suffstats_rows(countries: Sequence[CountryCalibration], dp, lambda_e: float) -> list[dict]:
    """Rows ``country, rwei, avg_pi, omega, mwsi, tau_star`` for the CLI table."""
    rows = []
    for c in countries:
        st = summary(c, dp, lambda_e)
        try:
            tau = optimal_subsidy(c, st.omega, lambda_e)
        except CalibrationError:
            tau = float("nan")
        rows.append({"country": c.code, "rwei": st.rwei, "avg_pi": st.avg_pi, "omega": st.omega,
                     "mwsi": st.mwsi, "tau_star": tau})
    return rows
