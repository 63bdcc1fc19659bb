"""Scenario runner: tables, decompositions, welfare rankings and derived coefficients.

Every experiment is a pure function of calibrations and scenarios and
returns an :class:`ExperimentReport`. Inflation rates and wedges in reports
are annualized percentage points and cumulative gaps are sums of those over
quarters (percentage-point quarters); raw model paths are quarterly
fractions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import suffstats
from .calibration import (CalibrationError, CommonParams, CountryCalibration, Indexation, PolicyRegime,
                          ShockScenario, Transfer, baseline_scenario, bundled_path, load_union, pooled_country,
                          regroup, union_weights)
from .solver import SolverOptions, TransitionResult, run_standard_twin, solve, solve_linear, solve_nonlinear

log = logging.getLogger(__name__)

WINDOW = 40
PP = 400.0
EXPERIMENT_TOL = 1e-6
PSI_REFERENCE = 5.4
TRANSFER_SHARE = 0.05
PEAK_GRID = (0.01, 0.05, 0.10, 0.15, 0.20, 0.25)
REGIME_LABELS = {
    "a": "aggressive tightening",
    "b": "moderate tightening with uniform transfer",
    "c": "moderate tightening with targeted transfer",
    "d": "moderate tightening with essentials subsidy",
}


@dataclass
class ExperimentReport:
    """Tabular result of one experiment.

    ``rows`` share one set of keys and become the CSV; ``summary`` holds
    union aggregates and derived coefficients.
    """

    name: str
    rows: list
    summary: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def columns(self) -> list:
        cols: list = []
        for row in self.rows:
            for k in row:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self, path: str | Path) -> None:
        cols = self.columns()
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for row in self.rows:
                writer.writerow([_fmt(row.get(c, "")) for c in cols])

    def to_dict(self) -> dict:
        return {"name": self.name, "rows": _jsonable(self.rows), "summary": _jsonable(self.summary),
                "meta": _jsonable(self.meta)}

    def to_json(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# path statistics
# ---------------------------------------------------------------------------


def cumulative(path: np.ndarray, window: int = WINDOW, target: float = 0.0) -> float:
    """Sum of ``path - target`` over quarters ``0 .. window-1``."""
    return float(np.sum(np.asarray(path)[:window] - target))


def half_life(path: np.ndarray) -> int:
    """First quarter after the peak at which the path is at or below half its peak.

    Returns ``-1`` when the path never falls that far within the horizon.
    """
    path = np.asarray(path, float)
    k = int(np.argmax(path))
    peak = path[k]
    if peak <= 0.0:
        return 0
    below = np.nonzero(path[k:] <= 0.5 * peak)[0]
    return int(k + below[0]) if below.size else -1


def discounted_loss(result: TransitionResult, countries: Sequence[CountryCalibration], beta: float,
                    weight_x: float) -> float:
    """GDP-weighted ``sum_t beta^t (pi_core_t^2 + weight_x x_t^2)``."""
    disc = beta ** np.arange(result.T)
    w = union_weights(countries)
    return float(sum(w[k] * (disc @ (result.countries[c.code]["pi_core"] ** 2
                                     + weight_x * result.countries[c.code]["x"] ** 2))
                     for k, c in enumerate(countries)))


def persistence(path: np.ndarray, start: int = 1, stop: int = 20) -> float:
    """Least-squares AR(1) coefficient of ``path`` over quarters ``start .. stop``."""
    y = np.asarray(path, float)[start + 1:stop + 1]
    x = np.asarray(path, float)[start:stop]
    den = float(x @ x)
    return float(x @ y / den) if den > 0.0 else 0.0


def _union(values: dict, countries: Sequence[CountryCalibration]) -> float:
    w = union_weights(countries)
    return float(sum(w[k] * values[c.code] for k, c in enumerate(countries)))


def _options(options: SolverOptions | None) -> SolverOptions:
    return options or SolverOptions(tol=EXPERIMENT_TOL)


def _baseline(common: CommonParams, scenario: ShockScenario | None, nonlinear: bool = True) -> ShockScenario:
    if scenario is not None:
        return scenario
    return replace(baseline_scenario(common), nonlinear=nonlinear)


def _pair(countries, common, scenario, options) -> tuple[TransitionResult, TransitionResult]:
    het = solve(countries, common, scenario, options)
    std = run_standard_twin(countries, common, scenario, options)
    return het, std


def _gaps(het: TransitionResult, std: TransitionResult, countries, window: int = WINDOW) -> dict:
    return {c.code: cumulative(het.countries[c.code]["pi_core"], window)
            - cumulative(std.countries[c.code]["pi_core"], window) for c in countries}


# ---------------------------------------------------------------------------
# shocks
# ---------------------------------------------------------------------------


def shock_scenarios(common: CommonParams, base: ShockScenario | None = None) -> dict:
    """Linear scenarios for the composition experiment.

    ``energy`` is the baseline essentials shock, ``food`` three quarters of
    it, ``uniform`` raises every item's salient price change equally and
    ``non_essentials`` is a cost-push shock to domestic goods and services.
    """
    base = replace(base or baseline_scenario(common), nonlinear=False)
    u = np.asarray(base.essentials_path, float)
    lam = common.lambda_e if common.lambda_e else 1.0
    return {
        "energy": base,
        "food": base.scaled(0.75),
        "uniform": replace(base, essentials_path=u / lam, goods_path=u.copy(), services_path=u.copy()),
        "non_essentials": replace(base, essentials_path=np.zeros_like(u), goods_path=u.copy(),
                                  services_path=u.copy()),
    }


def _zero_shock(scenario: ShockScenario) -> bool:
    return not np.any(scenario.item_paths())


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def wedge_table(countries: Sequence[CountryCalibration], common: CommonParams,
                scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                window: int = WINDOW) -> ExperimentReport:
    """Per-country peak core inflation, peak wedge, cumulative gap and half-lives.

    The heterogeneous economy is solved with the scenario's settings
    (nonlinear for the bundled baseline) and compared with its standard
    twin. Half-lives are reported for the nonlinear and for the linear
    solves; the linear pair is the like-for-like comparison.
    """
    options = _options(options)
    scenario = _baseline(common, scenario)
    het, std = _pair(countries, common, scenario, options)
    lin = het if not scenario.nonlinear else solve_linear(countries, common, scenario, options)
    gaps = _gaps(het, std, countries, window)
    u_cum = cumulative(scenario.essentials_path, window)
    rows = []
    for c in countries:
        h, s, l = het.countries[c.code], std.countries[c.code], lin.countries[c.code]
        omega = h["omega"]
        cum_het = cumulative(h["pi_core"], window)
        cum_std = cumulative(s["pi_core"], window)
        omega0 = float(omega[0])
        theta_bar = c.theta_bar
        rows.append({
            "country": c.code,
            "peak_core_pp": PP * float(h["pi_core"].max()),
            "peak_core_std_pp": PP * float(s["pi_core"].max()),
            "cum_core_pp": PP * cum_het,
            "cum_core_std_pp": PP * cum_std,
            "gap_pp": PP * gaps[c.code],
            "gap_share": gaps[c.code] / cum_het if cum_het else 0.0,
            "peak_omega_pp": PP * float(omega.max()),
            "rho_omega": persistence(omega),
            "half_life": half_life(h["pi_core"]),
            "half_life_std": half_life(s["pi_core"]),
            "half_life_linear": half_life(l["pi_core"]),
            "half_life_linear_std": half_life(s["pi_core"]),
            "R": cum_std / u_cum if u_cum else 0.0,
            "S": gaps[c.code] / (theta_bar * omega0 * u_cum) if omega0 and u_cum else 0.0,
        })
    summary = {
        "union_gap_pp": PP * _union(gaps, countries),
        "union_peak_omega_pp": _union({r["country"]: r["peak_omega_pp"] for r in rows}, countries),
        "union_cum_core_pp": _union({r["country"]: r["cum_core_pp"] for r in rows}, countries),
        "iterations": het.iterations,
        "residual_norm": het.residual_norm,
        "window": window,
    }
    return ExperimentReport("wedge_table", rows, summary)


def shock_composition(countries: Sequence[CountryCalibration], common: CommonParams,
                      scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                      window: int = WINDOW) -> ExperimentReport:
    """Peak wedge and het-std gap for energy, food, uniform and non-essentials shocks (linear)."""
    options = _options(options)
    rows = []
    for name, sc in shock_scenarios(common, scenario).items():
        het, std = _pair(countries, common, sc, options)
        gaps = _gaps(het, std, countries, window)
        for c in countries:
            omega = het.countries[c.code]["omega"]
            k = int(np.argmax(np.abs(omega)))
            rows.append({"shock": name, "country": c.code, "peak_omega_pp": PP * float(omega[k]),
                         "gap_pp": PP * gaps[c.code]})
    summary = {}
    for name in shock_scenarios(common, scenario):
        sub = {r["country"]: r for r in rows if r["shock"] == name}
        summary[name] = {
            "peak_omega_pp": _union({k: v["peak_omega_pp"] for k, v in sub.items()}, countries),
            "gap_pp": _union({k: v["gap_pp"] for k, v in sub.items()}, countries),
        }
    return ExperimentReport("shock_composition", rows, summary)


def same_openness(country_a: CountryCalibration, common: CommonParams, scenario: ShockScenario | None = None,
                  options: SolverOptions | None = None, window: int = WINDOW) -> ExperimentReport:
    """Gradient economy A against its uniform twin B with the same aggregate shares and reset rate.

    Both economies are solved with the same solver settings; B pools A's
    groups, so its wedge is zero by construction.
    """
    options = _options(options)
    scenario = _baseline(common, scenario)
    b = replace(pooled_country(country_a, common.beta), code=f"{country_a.code}_uniform")
    res = {}
    for label, c in (("A", country_a), ("B", b)):
        r = solve([c], common, scenario, options)
        d = r.countries[c.code]
        res[label] = {"economy": label, "country": c.code,
                      "import_share": float(c.eta @ c.alpha[:, 0]), "theta_bar": c.theta_bar,
                      "peak_omega_pp": PP * float(d["omega"].max()),
                      "cum_core_pp": PP * cumulative(d["pi_core"], window),
                      "peak_core_pp": PP * float(d["pi_core"].max())}
    gap = res["A"]["cum_core_pp"] - res["B"]["cum_core_pp"]
    return ExperimentReport("same_openness", [res["A"], res["B"]], {"gap_pp": gap})


def policy_regimes(common: CommonParams, T: int, transfer_amount: float = TRANSFER_SHARE, subsidy: float = 0.06,
                   transfer_group: str = "Q1", aggressive: float = 2.5, moderate: float = 1.5) -> dict:
    """Regimes (a)-(d).

    (a) aggressive tightening; (b) moderate tightening with a uniform
    transfer; (c) moderate tightening with the same budget targeted at
    ``transfer_group``; (d) moderate tightening with an essentials price
    cut of ``subsidy``. The transfer budget compensates ``transfer_amount``
    of the average essentials cost increase.
    """
    y = common.taylor_y
    return {
        "a": PolicyRegime.constant(aggressive, y, T),
        "b": PolicyRegime.constant(moderate, y, T, transfer=Transfer("uniform", transfer_amount)),
        "c": PolicyRegime.constant(moderate, y, T, transfer=Transfer("targeted", transfer_amount, transfer_group)),
        "d": PolicyRegime.constant(moderate, y, T, subsidy=subsidy),
    }


def policy_matrix(countries: Sequence[CountryCalibration], common: CommonParams,
                  scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                  regimes: dict | None = None, window: int = WINDOW) -> ExperimentReport:
    """Welfare loss of each regime, normalized so that regime (a) equals one."""
    options = _options(options)
    scenario = _baseline(common, scenario)
    regimes = regimes or policy_regimes(common, scenario.T, transfer_group=countries[0].groups[0].label)
    rows = []
    for key, regime in regimes.items():
        res = solve(countries, common, replace(scenario, policy=regime), options)
        loss = discounted_loss(res, countries, common.beta, common.loss_weight_x)
        cum = _union({c.code: cumulative(res.countries[c.code]["pi_core"], window) for c in countries}, countries)
        out = _union({c.code: cumulative(res.countries[c.code]["x"], window) for c in countries}, countries)
        rows.append({"regime": key, "description": REGIME_LABELS.get(key, key), "loss": loss,
                     "cum_core_pp": PP * cum, "cum_output_pp": PP * out})
    base = next(r["loss"] for r in rows if r["regime"] == "a") if any(r["regime"] == "a" for r in rows) else rows[0]["loss"]
    for r in rows:
        r["loss_normalized"] = r["loss"] / base if base > 0.0 else 0.0
    ranking = [r["regime"] for r in sorted(rows, key=lambda r: (r["loss"], r["regime"]))]
    return ExperimentReport("policy_matrix", rows, {"ranking": ranking})


INDEXATION_REGIMES = {
    "none": Indexation("none", 0.0),
    "cpi": Indexation("cpi", 1.0),
    "type_specific": Indexation("type_specific", 1.0),
}


def indexation_table(countries: Sequence[CountryCalibration], common: CommonParams,
                     scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                     window: int = WINDOW) -> ExperimentReport:
    """Peak wedge and het-std gap under no, full CPI and full type-specific indexation (linear)."""
    options = _options(options)
    scenario = replace(_baseline(common, scenario, nonlinear=False), nonlinear=False)
    rows = []
    for name, ix in INDEXATION_REGIMES.items():
        sc = replace(scenario, indexation=ix)
        het, std = _pair(countries, common, sc, options)
        gaps = _gaps(het, std, countries, window)
        for c in countries:
            rows.append({"indexation": name, "country": c.code,
                         "peak_omega_pp": PP * float(het.countries[c.code]["omega"].max()),
                         "gap_pp": PP * gaps[c.code],
                         "cum_core_pp": PP * cumulative(het.countries[c.code]["pi_core"], window)})
    summary = {name: _union({r["country"]: r["gap_pp"] for r in rows if r["indexation"] == name}, countries)
               for name in INDEXATION_REGIMES}
    return ExperimentReport("indexation_table", rows, {"union_gap_pp": summary})


def delayed_policy(countries: Sequence[CountryCalibration], common: CommonParams,
                   scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                   delay: int = 5, taylor_pi: float = 2.0, immediate_pi: float | None = None,
                   window: int = WINDOW) -> ExperimentReport:
    """Het-std gap when the union responds at once versus after ``delay`` quarters.

    The default scenario is the bundled delay scenario (a larger shock).
    The immediate regime applies ``immediate_pi`` (default: the calibrated
    Taylor coefficient) from quarter 0; the delayed regime sets the
    coefficient to zero for ``delay`` quarters and to ``taylor_pi`` after.
    """
    options = _options(options)
    if scenario is None:
        from .calibration import load_scenario
        scenario = load_scenario(bundled_path("scenarios") / "delay.json", common)
    T = scenario.T
    regimes = {
        "immediate": PolicyRegime.constant(common.taylor_pi if immediate_pi is None else immediate_pi,
                                           common.taylor_y, T),
        "delayed": PolicyRegime.constant(taylor_pi, common.taylor_y, T, delay=delay),
    }
    rows = []
    for name, regime in regimes.items():
        sc = replace(scenario, policy=regime)
        het, std = _pair(countries, common, sc, options)
        gaps = _gaps(het, std, countries, window)
        for c in countries:
            cum = cumulative(het.countries[c.code]["pi_core"], window)
            rows.append({"regime": name, "country": c.code, "gap_pp": PP * gaps[c.code],
                         "cum_core_pp": PP * cum, "gap_share": gaps[c.code] / cum if cum else 0.0})
    return ExperimentReport("delayed_policy", rows, {"delay": delay, "taylor_pi": taylor_pi,
                                                     "immediate_pi": regimes["immediate"].taylor_pi_path[0]})


def _shrink_groups(country: CountryCalibration, attr: str, keep: float, beta: float) -> CountryCalibration:
    """Move one dimension of group heterogeneity a fraction ``1 - keep`` towards its population mean."""
    eta = country.eta
    groups = []
    if attr == "basket":
        mean = eta @ country.alpha
        for g in country.groups:
            a = keep * g.alpha() + (1.0 - keep) * mean
            groups.append(replace(g, alpha_e=float(a[0]), alpha_d=float(a[1]), alpha_s=float(1.0 - a[0] - a[1])))
    elif attr == "reset":
        from .calibration import wage_slope
        kappa_tilde = float(sum(g.eta * wage_slope(g, beta) for g in country.groups))
        mean = country.theta_bar
        for g in country.groups:
            theta = keep * g.theta + (1.0 - keep) * mean
            k = keep * wage_slope(g, beta) + (1.0 - keep) * kappa_tilde
            groups.append(replace(g, theta=float(theta), kappa=float(k)))
    else:
        raise CalibrationError(f"unknown heterogeneity dimension {attr!r}")
    return replace(country, groups=tuple(groups))


def channel_decomposition(countries: Sequence[CountryCalibration], common: CommonParams,
                          scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                          shrink: float = 0.25, window: int = WINDOW) -> ExperimentReport:
    """Het-std gap with basket, propagation and reset heterogeneity scaled down one at a time.

    The full model routes each group's wage into its own sector
    (segmented employment). Each single-channel row shrinks one dimension
    of heterogeneity by ``shrink`` towards its mean (for propagation, the
    blend between sector-specific and economy-wide wages); the last row
    removes all heterogeneity, which is the standard twin. Linear solves.
    """
    base = _options(options)
    seg = replace(base, employment="segmented", segmentation=1.0)
    scenario = replace(_baseline(common, scenario, nonlinear=False), nonlinear=False)
    std = run_standard_twin(countries, common, scenario, base)

    def gap(cs, opts) -> float:
        het = solve_linear(cs, common, scenario, opts)
        return _union(_gaps(het, std, cs, window), countries)

    keep = 1.0 - shrink
    full = gap(countries, seg)
    cases = {
        "basket": gap([_shrink_groups(c, "basket", keep, common.beta) for c in countries], seg),
        "propagation": gap(countries, replace(seg, segmentation=keep)),
        "reset": gap([_shrink_groups(c, "reset", keep, common.beta) for c in countries], seg),
    }
    rows = [{"channel": "full", "gap_pp": PP * full, "delta_pp": 0.0}]
    for name, g in cases.items():
        rows.append({"channel": f"less_{name}", "gap_pp": PP * g, "delta_pp": PP * (g - full)})
    rows.append({"channel": "all_equal", "gap_pp": 0.0, "delta_pp": -PP * full})
    return ExperimentReport("channel_decomposition", rows,
                            {"shrink": shrink, "sum_single_deltas_pp": PP * sum(g - full for g in cases.values())})


def estimate_psi(countries: Sequence[CountryCalibration], common: CommonParams,
                 peaks: Sequence[float] = (0.01, 0.02, 0.04), options: SolverOptions | None = None,
                 nonlinear: bool = True, window: int = WINDOW) -> ExperimentReport:
    """Slope of the het-std cumulative gap on marginal wage-setter inflation.

    Each observation is one country at one shock scale; ``MWSI`` uses the
    peak-quarter essentials price change. The slope is a first-order
    coefficient, so it is fitted (without intercept) on the smallest shock
    scale only; every scale is then compared with that first-order
    prediction and relative residuals are reported per scale.
    """
    options = _options(options)
    xs, ys, keys = [], [], []
    for peak in peaks:
        sc = replace(baseline_scenario(common, peak=peak), nonlinear=nonlinear)
        het, std = _pair(countries, common, sc, options)
        gaps = _gaps(het, std, countries, window)
        dp = {"e": float(np.max(sc.essentials_path)), "d": 0.0, "s": 0.0}
        for c in countries:
            xs.append(PP * float(suffstats.mwsi(c, dp, common.lambda_e)))
            ys.append(PP * gaps[c.code])
            keys.append((peak, c.code))
    x, y = np.array(xs), np.array(ys)
    fit = np.array([key[0] == min(peaks) for key in keys])
    xf, yf = x[fit], y[fit]
    psi = float(xf @ yf / (xf @ xf)) if xf @ xf > 0.0 else 0.0
    resid = y - psi * x
    rows = [{"peak": p, "country": code, "mwsi_pp": float(xi), "gap_pp": float(yi), "residual_pp": float(ri)}
            for (p, code), xi, yi, ri in zip(keys, x, y, resid)]
    by_peak = {}
    for p in peaks:
        idx = [k for k, key in enumerate(keys) if key[0] == p]
        by_peak[str(p)] = float(np.linalg.norm(resid[idx]) / np.linalg.norm(y[idx])) if np.any(y[idx]) else 0.0
    ss_tot = float(y @ y)
    summary = {"psi": psi, "fit_peak": min(peaks),
               "r2_uncentered": 1.0 - float(resid @ resid) / ss_tot if ss_tot else 1.0,
               "relative_residual_by_peak": by_peak}
    return ExperimentReport("estimate_psi", rows, summary)


def _optimal_rule(country: CountryCalibration, common: CommonParams, scenario: ShockScenario,
                  options: SolverOptions, grid: np.ndarray, coarse: int) -> tuple[float, TransitionResult, float]:
    """Country-optimal inflation response by grid search, coarse pass then the full grid near the minimum."""
    cache: dict = {}

    def loss(phi: float) -> float:
        key = round(float(phi), 10)
        if key not in cache:
            regime = replace(scenario.policy, taylor_pi_path=np.full(scenario.T, phi))
            res = solve([country], common, replace(scenario, policy=regime), options)
            cache[key] = (discounted_loss(res, [country], common.beta, common.loss_weight_x), res)
        return cache[key][0]

    idx = np.arange(0, len(grid), coarse)
    if idx[-1] != len(grid) - 1:
        idx = np.append(idx, len(grid) - 1)
    k_best = int(idx[np.argmin([loss(grid[k]) for k in idx])])
    lo, hi = max(k_best - coarse, 0), min(k_best + coarse, len(grid) - 1)
    fine = list(range(lo, hi + 1))
    k_best = fine[int(np.argmin([loss(grid[k]) for k in fine]))]
    phi = float(grid[k_best])
    return phi, cache[round(phi, 10)][1], cache[round(phi, 10)][0]


def oca_decomposition(countries: Sequence[CountryCalibration], common: CommonParams,
                      scenario: ShockScenario | None = None, options: SolverOptions | None = None,
                      grid: np.ndarray | None = None, coarse: int = 10, window: int = WINDOW) -> ExperimentReport:
    """Cross-country dispersion of country-optimal policy and its two components.

    Each country's optimal inflation response minimizes its own loss when
    it alone sets the rate (grid over ``[1.01, 5.0]`` in steps of 0.01).
    The cumulative optimal rate ``i*_c`` is projected on ``R_c`` and
    ``theta_bar_c Omega_c``; the variance of each fitted component (with
    the covariance split evenly) is reported. ``bias`` is the union rate
    minus the country optimum, so a positive value means over-tightened.
    """
    options = _options(options)
    scenario = replace(_baseline(common, scenario, nonlinear=False), nonlinear=False)
    grid = np.round(np.arange(1.01, 5.0 + 1e-9, 0.01), 2) if grid is None else np.asarray(grid, float)
    union = solve(countries, common, scenario, options)
    u_cum = cumulative(scenario.essentials_path, window)
    rows = []
    for c in countries:
        phi, res, loss = _optimal_rule(c, common, scenario, options, grid, coarse)
        std = run_standard_twin([c], common, scenario, options)
        i_star = cumulative(res.union["i"], window)
        i_union = cumulative(union.union["i"], window)
        omega = float(union.countries[c.code]["omega"].max())
        rows.append({"country": c.code, "phi_star": phi, "i_star_pp": PP * i_star, "i_union_pp": PP * i_union,
                     "bias_pp": PP * (i_union - i_star),
                     "status": "over-tightened" if i_union > i_star else "under-tightened",
                     "R": cumulative(std.countries[c.code]["pi_core"], window) / u_cum if u_cum else 0.0,
                     "theta_omega_pp": PP * c.theta_bar * omega, "loss": loss})
    y = np.array([r["i_star_pp"] for r in rows])
    R = np.array([r["R"] for r in rows])
    W = np.array([r["theta_omega_pp"] for r in rows])
    comp_r, comp_w, resid = _projection(y, R, W)
    summary = {"var_i_star": float(np.var(y)), "rwei_dispersion_component": comp_r,
               "wedge_dispersion_component": comp_w, "residual_variance": resid}
    return ExperimentReport("oca_decomposition", rows, summary)


def _projection(y: np.ndarray, r: np.ndarray, w: np.ndarray, tol: float = 1e-12) -> tuple[float, float, float]:
    """Variance of ``y`` attributed to two regressors by least squares with an intercept."""
    yc = y - y.mean()
    cols, names = [], []
    for name, v in (("r", r), ("w", w)):
        vc = v - v.mean()
        if np.max(np.abs(vc)) > tol:
            cols.append(vc)
            names.append(name)
    if not cols or np.max(np.abs(yc)) <= tol:
        return 0.0, 0.0, float(np.var(y))
    X = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(X, yc, rcond=None)
    fitted = {n: coef[k] * X[:, k] for k, n in enumerate(names)}
    zero = np.zeros_like(y)
    fr, fw = fitted.get("r", zero), fitted.get("w", zero)
    cov = float(np.mean(fr * fw))
    comp_r = float(np.mean(fr ** 2)) + cov
    comp_w = float(np.mean(fw ** 2)) + cov
    resid = float(np.mean((yc - fr - fw) ** 2))
    return comp_r, comp_w, resid


def amplification_curve(countries: Sequence[CountryCalibration], common: CommonParams,
                        peaks: Sequence[float] = PEAK_GRID, options: SolverOptions | None = None,
                        window: int = WINDOW) -> ExperimentReport:
    """Ratio of the nonlinear to the linear union het-std gap across shock sizes."""
    options = _options(options)
    rows = []
    for peak in peaks:
        sc = baseline_scenario(common, peak=peak)
        std = run_standard_twin(countries, common, sc, options)
        lin = solve_linear(countries, common, sc, options)
        nl = solve_nonlinear(countries, common, replace(sc, nonlinear=True), options)
        g_lin = _union(_gaps(lin, std, countries, window), countries)
        g_nl = _union(_gaps(nl, std, countries, window), countries)
        rows.append({"peak": peak, "linear_gap_pp": PP * g_lin, "nonlinear_gap_pp": PP * g_nl,
                     "ratio": g_nl / g_lin if g_lin else 1.0, "iterations": nl.iterations})
    return ExperimentReport("amplification_curve", rows)


def predicted_gap(psi: float, omega_pp: float) -> float:
    """Cumulative het-std gap implied by a wedge of ``omega_pp`` percentage points."""
    return psi * omega_pp


def _read_portability(path: Path) -> list:
    if not path.is_file():
        raise FileNotFoundError(f"portability data not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    need = {"country", "essentials_q1_pct", "essentials_q5_pct", "theta_gap"}
    if not rows or not need <= set(rows[0]):
        raise CalibrationError(f"{path}: expected columns {sorted(need)}")
    return rows


def portability_stats(directory: str | Path | None = None, psi: float = PSI_REFERENCE,
                      reference: tuple | None = None, peak: float | None = None) -> ExperimentReport:
    """Wedge index and predicted gap for economies outside the calibration sample.

    Each economy is summarized by two types (bottom and top quintile) with
    equal weights. The two-type wedge is proportional to the reset gap
    times the essentials-share gap; it is put on the euro-area scale by
    the ratio to the same product for the euro-area bottom and top
    quintiles (GDP-weighted), whose wedge is the euro-area calibration's
    closed-form peak wedge. The index is ten times the wedge in
    percentage points.
    """
    directory = Path(directory) if directory is not None else bundled_path("noneuro")
    path = directory / "portability.csv" if directory.is_dir() else directory
    rows_in = _read_portability(path)
    countries, common = reference or load_union(bundled_path("euroarea6"))
    peak = float(np.max(baseline_scenario(common).essentials_path)) if peak is None else peak
    w = union_weights(countries)
    q = lambda k, attr: float(sum(w[j] * getattr(c.groups[k], attr) for j, c in enumerate(countries)))
    ea_product = (q(0, "theta") - q(-1, "theta")) * (q(0, "alpha_e") - q(-1, "alpha_e"))
    dp = {"e": peak, "d": 0.0, "s": 0.0}
    ea_omega = PP * float(sum(w[j] * suffstats.wedge(c, dp, common.lambda_e) for j, c in enumerate(countries)))
    rows = []
    for r in rows_in:
        product = float(r["theta_gap"]) * (float(r["essentials_q1_pct"]) - float(r["essentials_q5_pct"])) / PP
        omega = ea_omega * product / ea_product
        rows.append({"country": r["country"], "omega_pp": omega, "rwei_index": 10.0 * omega,
                     "predicted_gap_pp": predicted_gap(psi, omega)})
    rows.append({"country": "EA", "omega_pp": ea_omega, "rwei_index": 10.0 * ea_omega,
                 "predicted_gap_pp": predicted_gap(psi, ea_omega)})
    ranking = [r["country"] for r in sorted(rows, key=lambda r: -r["predicted_gap_pp"])]
    return ExperimentReport("portability_stats", rows, {"psi": psi, "predicted_ranking": ranking})


# ---------------------------------------------------------------------------
# registry and output
# ---------------------------------------------------------------------------


def _euro(directory=None):
    return load_union(directory or bundled_path("euroarea6"))


def _run_wedge(d, sc, opt):
    cs, cm = _euro(d)
    return wedge_table(cs, cm, sc, opt)


def _run_composition(d, sc, opt):
    cs, cm = _euro(d)
    return shock_composition(cs, cm, sc, opt)


def _run_same(d, sc, opt):
    cs, cm = load_union(d or bundled_path("same_openness"))
    return same_openness(cs[0], cm, sc, opt)


def _run_policy(d, sc, opt):
    cs, cm = _euro(d)
    return policy_matrix(cs, cm, sc, opt)


def _run_index(d, sc, opt):
    cs, cm = _euro(d)
    return indexation_table(cs, cm, sc, opt)


def _run_delay(d, sc, opt):
    cs, cm = _euro(d)
    return delayed_policy(cs, cm, sc, opt)


def _run_channel(d, sc, opt):
    cs, cm = _euro(d)
    return channel_decomposition(cs, cm, sc, opt)


def _run_psi(d, sc, opt):
    cs, cm = _euro(d)
    return estimate_psi(cs, cm, options=opt)


def _run_oca(d, sc, opt):
    cs, cm = _euro(d)
    return oca_decomposition(cs, cm, sc, opt)


def _run_amp(d, sc, opt):
    cs, cm = _euro(d)
    return amplification_curve(cs, cm, options=opt)


def _run_port(d, sc, opt):
    return portability_stats(d)


EXPERIMENTS: dict[str, Callable] = {
    "wedge-table": _run_wedge,
    "shock-composition": _run_composition,
    "same-openness": _run_same,
    "policy-matrix": _run_policy,
    "indexation-table": _run_index,
    "delayed-policy": _run_delay,
    "channel-decomposition": _run_channel,
    "estimate-psi": _run_psi,
    "oca-decomposition": _run_oca,
    "amplification-curve": _run_amp,
    "portability-stats": _run_port,
}


def digest(obj) -> str:
    return hashlib.sha256(repr(obj).encode("utf-8")).hexdigest()[:16]


DEFAULT_CALIBRATION = {"same-openness": "same_openness", "portability-stats": "noneuro"}


def directory_digest(path: str | Path) -> str:
    """Content hash of a calibration file or of every file below a directory."""
    path = Path(path)
    h = hashlib.sha256()
    files = [path] if path.is_file() else sorted(p for p in path.rglob("*") if p.is_file())
    for f in files:
        h.update(str(f.relative_to(path) if f != path else f.name).encode("utf-8"))
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


def scenario_digest(scenario: ShockScenario | None) -> str:
    if scenario is None:
        return "default"
    parts = [scenario.item_paths().tobytes(), np.asarray(scenario.policy.taylor_pi_path).tobytes(),
             repr((scenario.policy.taylor_y, scenario.policy.transfer, scenario.policy.subsidy,
                   scenario.indexation, scenario.nonlinear)).encode()]
    return hashlib.sha256(b"".join(parts)).hexdigest()[:16]


def update_manifest(outdir: Path, name: str, entry: dict) -> None:
    path = outdir / "manifest.json"
    data = {}
    if path.is_file():
        with path.open(encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError:
                data = {}
    data[name] = entry
    with path.open("w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_experiment(name: str, outdir: str | Path, calib_dir: str | Path | None = None,
                   scenario: ShockScenario | None = None, options: SolverOptions | None = None) -> ExperimentReport:
    """Run a registered experiment and write ``<name>.csv``, ``<name>.json`` and the manifest entry."""
    if name not in EXPERIMENTS:
        raise KeyError(name)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report = EXPERIMENTS[name](calib_dir, scenario, options)
    wall = time.perf_counter() - start
    stem = name.replace("-", "_")
    report.to_csv(outdir / f"{stem}.csv")
    report.to_json(outdir / f"{stem}.json")
    calib = Path(calib_dir) if calib_dir else bundled_path(DEFAULT_CALIBRATION.get(name, "euroarea6"))
    update_manifest(outdir, stem, {"calibration": str(calib), "calibration_hash": directory_digest(calib),
                                   "scenario_hash": scenario_digest(scenario),
                                   "solver": repr(options or SolverOptions(tol=EXPERIMENT_TOL))})
    log.info("experiment %s finished in %.1fs", name, wall)
    return report
