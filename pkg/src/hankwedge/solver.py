"""Union-wide sequence-space system: assembly, linear and nonlinear solves.

Unknowns per country are one nominal wage level path per worker group and
the two sector price level paths; targets are the matching wage and price
Phillips-curve residuals. Everything else (experienced inflation, CPI and
core inflation, output, trade, the union policy rate) is an intermediate
output computed from the unknowns and the exogenous paths.

One function evaluates the model. Fed numeric paths it returns residuals;
fed :class:`~hankwedge.blocks.Linear` roots it returns their exact
Jacobians by forward accumulation. The union policy rate couples every
country, so the per-country targets are composed with the rate as an extra
root and the rate's own Jacobian is substituted afterwards, which keeps
intermediate expressions small.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .blocks import (Linear, apply_indexation, catchup_gap, core_inflation, cumulate, diff, experienced_paths,
                     fiscal_apply, lead, sector_price_residual, trade_demand, type_wage_pc_residual)
from .calibration import (SECTORS, CalibrationError, CommonParams, CountryCalibration, Indexation,
                          PolicyRegime, ShockScenario, pooled_country, union_weights)
from .household import HouseholdJacobians, household_jacobians

log = logging.getLogger(__name__)

DEMAND_MODES = ("hank", "is")
EMPLOYMENT_MODES = ("pooled", "segmented")
RATE = "i"
MAX_BACKTRACK = 12
# a step of size lam that removes less than SLOW_PROGRESS * lam of the residual
# triggers a Jacobian refresh
SLOW_PROGRESS = 0.5


class SolverError(RuntimeError):
    """The system is singular or indeterminate, or the nonlinear solve did not converge."""

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None,
                 rcond: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.rcond = rcond


@dataclass(frozen=True)
class SolverOptions:
    """Numerical settings of the solver.

    ``demand`` selects the heterogeneous-household demand block (``hank``)
    or a representative-household IS curve (``is``). ``employment``
    selects whether sector prices use the economy-wide wage (``pooled``)
    or the wage of the groups working in each sector (``segmented``);
    ``segmentation`` in ``[0, 1]`` blends the two in segmented mode.
    ``catchup`` overrides the real-wage catch-up coefficient.
    """

    tol: float = 1e-3
    max_iter: int = 200
    damping: float = 0.3
    damping_threshold: float = 0.05
    demand: str = "hank"
    employment: str = "pooled"
    catchup: float | None = None
    segmentation: float = 1.0
    min_rcond: float = 1e-14

    def validate(self) -> None:
        if self.demand not in DEMAND_MODES:
            raise CalibrationError(f"unknown demand mode {self.demand!r}; expected one of {DEMAND_MODES}")
        if self.employment not in EMPLOYMENT_MODES:
            raise CalibrationError(f"unknown employment mode {self.employment!r}; expected one of {EMPLOYMENT_MODES}")
        if not (0.0 < self.damping <= 1.0):
            raise CalibrationError(f"damping {self.damping} outside (0, 1]")
        if not (0.0 <= self.segmentation <= 1.0):
            raise CalibrationError(f"segmentation {self.segmentation} outside [0, 1]")
        if self.tol <= 0.0 or self.max_iter < 1:
            raise CalibrationError("tolerance must be positive and max_iter at least 1")


# ---------------------------------------------------------------------------
# system graph
# ---------------------------------------------------------------------------


BLOCK_ORDER = (
    ("fiscal", ("u",), ("subsidy", "net_transfer")),
    ("experienced", ("u", "z_goods", "z_services", "subsidy", "net_transfer"), ("pi_tilde",)),
    ("indexation", ("pi_tilde",), ("forcing", "iota", "omega", "rwei")),
    ("prices", ("p_services", "p_goods", "u", "z_goods", "z_services"), ("pi_core", "pi_cpi")),
    ("trade", ("p_goods",), ("exports",)),
    ("demand", ("pi_cpi", "net_transfer", "exports", "i"), ("x",)),
    ("taylor", ("pi_core", "x"), ("i",)),
    ("wage_pc", ("w", "forcing", "iota", "x"), ("wage_residual",)),
    ("price_pc", ("p_services", "p_goods", "w", "u"), ("price_residual",)),
)


@dataclass
class SystemGraph:
    """Assembled union system for one calibration, monetary rule and indexation regime.

    ``F_X`` is kept only for small systems; the LU factors are always
    kept. ``blocks`` lists each block with its input and output labels in
    evaluation order.
    """

    countries: list
    common: CommonParams
    regime: PolicyRegime
    indexation: Indexation
    options: SolverOptions
    T: int
    hh: HouseholdJacobians | None
    unknowns: list
    targets: list
    shocks: list
    K: np.ndarray
    Minv: np.ndarray | None
    Q: np.ndarray | None
    lu: tuple | None = None
    rcond: float = float("nan")
    F_X: np.ndarray | None = None
    blocks: tuple = BLOCK_ORDER

    @property
    def catchup(self) -> float:
        return self.common.b_catchup if self.options.catchup is None else self.options.catchup

    @property
    def size(self) -> int:
        return len(self.unknowns) * self.T

    def unknown_slices(self) -> dict:
        return {name: slice(k * self.T, (k + 1) * self.T) for k, name in enumerate(self.unknowns)}

    def F_Z(self, shocks: Sequence[str] | None = None) -> np.ndarray:
        """Dense Jacobian of the targets with respect to the exogenous roots."""
        shocks = list(self.shocks if shocks is None else shocks)
        X = {k: np.zeros(self.T) for k in self.unknowns}
        Z = {k: Linear.root(k, self.T) for k in shocks}
        targets, i_expr = _symbolic(self, X, Z)
        IZ = i_expr.jacobian(shocks) if i_expr is not None else None
        out = np.vstack([_rows(t, shocks, IZ) for t in targets.values()])
        return out


def unknown_names(country: CountryCalibration) -> list:
    return [f"{country.code}:w:{g.label}" for g in country.groups] + [f"{country.code}:p:{s}" for s in SECTORS]


def target_names(country: CountryCalibration) -> list:
    return [f"{country.code}:wage:{g.label}" for g in country.groups] + [f"{country.code}:price:{s}" for s in SECTORS]


def shock_names(countries: Sequence[CountryCalibration]) -> list:
    names = ["z:e", "z:d", "z:s"]
    for c in countries:
        names.append(f"{c.code}:subsidy")
        names += [f"{c.code}:net:{g.label}" for g in c.groups]
    return names


def _demand_matrices(common: CommonParams, hh: HouseholdJacobians | None, T: int, demand: str):
    if demand == "is":
        U = np.triu(np.ones((T, T)))
        return -U / common.sigma, None
    M = hh[("C", "w")] * hh.w_ss / hh.C_ss
    Minv = np.linalg.inv(np.eye(T) - M)
    return Minv @ hh.rate_jacobian / hh.C_ss, Minv


def _rows(target: Linear, roots: list, i_jac: np.ndarray | None) -> np.ndarray:
    T = target.T
    index = {name: k for k, name in enumerate(roots)}
    out = np.zeros((T, T * len(roots)))
    for name, m in target.blocks.items():
        if name == RATE:
            if i_jac is not None:
                out += m @ i_jac
        elif name in index:
            k = index[name]
            out[:, k * T:(k + 1) * T] += m
    return out


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------


def _sector_wages(system: SystemGraph, country: CountryCalibration, w: list) -> dict:
    eta = country.eta
    w_agg = sum(eta[k] * w[k] for k in range(len(w)))
    if system.options.employment == "pooled":
        return {s: w_agg for s in SECTORS}
    out = {}
    for s in SECTORS:
        members = [k for k, g in enumerate(country.groups) if g.sector == s]
        if not members:
            out[s] = w_agg
            continue
        share = sum(eta[k] for k in members)
        own = sum((eta[k] / share) * w[k] for k in members)
        mix = system.options.segmentation
        out[s] = own if mix == 1.0 else mix * own + (1.0 - mix) * w_agg
    return out


def _model(system: SystemGraph, X: dict, Z: dict, rate=None, nonlinear: bool = False) -> tuple[dict, dict, object]:
    """Evaluate targets and intermediate outputs.

    ``rate`` is the union policy rate path to use inside the country
    blocks; when ``None`` the Taylor rule value is used directly. Returns
    ``(targets, outputs, taylor_rate)``.
    """
    common, T = system.common, system.T
    beta = common.beta
    z_e, z_d, z_s = Z["z:e"], Z["z:d"], Z["z:s"]
    p_e = cumulate(z_e)
    pre = {}
    for c in system.countries:
        code = c.code
        w = [X[f"{code}:w:{g.label}"] for g in c.groups]
        p_s, p_d = X[f"{code}:p:services"], X[f"{code}:p:goods"]
        net = [Z[f"{code}:net:{g.label}"] for g in c.groups]
        e_w = z_e - Z[f"{code}:subsidy"]
        pi_tilde = experienced_paths(c, (e_w, z_d, z_s), common.lambda_e, net)
        forcing = apply_indexation(system.indexation, c, pi_tilde)
        alpha_bar = c.eta @ c.alpha
        pi_d, pi_s = diff(p_d) + z_d, diff(p_s) + z_s
        pi_cpi = alpha_bar[0] * e_w + alpha_bar[1] * pi_d + alpha_bar[2] * pi_s
        pre[code] = dict(w=w, p_s=p_s, p_d=p_d, net=net, e_w=e_w, pi_tilde=pi_tilde, forcing=forcing,
                         pi_cpi=pi_cpi, pi_core=core_inflation(c, p_s, p_d, z_d, z_s))
    exports = trade_demand(system.countries, {c.code: pre[c.code]["p_d"] for c in system.countries},
                           common.eps_trade)
    for c in system.countries:
        d = pre[c.code]
        openness = c.sectors["goods"].gdp_weight
        if system.options.demand == "is":
            b = (-1.0) * (system.K @ lead(d["pi_cpi"])) + openness * exports[c.code]
        else:
            J_T = system.hh[("C", "transfer")]
            inner = (-1.0) * (system.hh.rate_jacobian @ lead(d["pi_cpi"])) * (1.0 / system.hh.C_ss)
            for k, g in enumerate(c.groups):
                scale = 1.0 if g.mpc is None else g.mpc / system.hh.mpc
                inner = inner + (c.eta[k] * scale) * (J_T @ d["net"][k])
            inner = inner + openness * exports[c.code]
            b = system.Minv @ inner
        d["b"] = b
        d["exports"] = exports[c.code]
    weights = union_weights(system.countries)
    pi_u = sum(weights[k] * pre[c.code]["pi_core"] for k, c in enumerate(system.countries))
    b_u = sum(weights[k] * pre[c.code]["b"] for k, c in enumerate(system.countries))
    if system.regime.exogenous_rate:
        taylor = None
    else:
        phi_pi = np.asarray(system.regime.taylor_pi_path, float)
        taylor = system.Q @ (np.diag(phi_pi) @ pi_u + system.regime.taylor_y * b_u)
    if rate is None:
        rate = np.zeros(T) if taylor is None else taylor

    b_prime = system.catchup
    omega_coef = common.sigma + common.phi_n
    targets, outputs = {}, {}
    for c in system.countries:
        code = c.code
        d = pre[code]
        x = system.K @ rate + d["b"]
        f = d["forcing"]
        for k, g in enumerate(c.groups):
            catch = None
            if nonlinear and b_prime:
                p_g = (g.alpha_e * cumulate(d["e_w"]) + g.alpha_d * (d["p_d"] + cumulate(z_d))
                       + g.alpha_s * (d["p_s"] + cumulate(z_s)) - cumulate(d["net"][k]))
                catch = b_prime * catchup_gap(p_g, d["w"][k], common.catchup_cushion)
            targets[f"{code}:wage:{g.label}"] = type_wage_pc_residual(
                g, diff(d["w"][k]), f.forcing[k], x, beta, omega_coef, f.iota[k], catch)
        wj = _sector_wages(system, c, d["w"])
        targets[f"{code}:price:services"] = sector_price_residual(
            c.sectors["services"], d["p_s"], wj["services"], d["p_d"], p_e, beta, own="services")
        targets[f"{code}:price:goods"] = sector_price_residual(
            c.sectors["goods"], d["p_d"], wj["goods"], d["p_s"], p_e, beta, own="goods")
        outputs[code] = dict(d, x=x)
    outputs["_union"] = dict(pi_core=pi_u, i=rate, weights=weights)
    return targets, outputs, taylor


def _symbolic(system: SystemGraph, X: dict, Z: dict) -> tuple[dict, Linear | None]:
    """Targets with the policy rate as a root, plus the rate's own expression."""
    rate = np.zeros(system.T) if system.regime.exogenous_rate else Linear.root(RATE, system.T)
    targets, _, taylor = _model(system, X, Z, rate=rate)
    if taylor is not None and not isinstance(taylor, Linear):
        taylor = Linear(system.T, const=taylor)
    return targets, taylor


def shock_values(system: SystemGraph, scenario: ShockScenario) -> dict:
    """Numeric exogenous paths, including each country's fiscal instruments."""
    items = scenario.item_paths()
    if items.shape[1] != system.T:
        raise CalibrationError(f"scenario horizon {items.shape[1]} != system horizon {system.T}")
    Z = {"z:e": items[0], "z:d": items[1], "z:s": items[2]}
    for c in system.countries:
        fp = fiscal_apply(scenario.policy, c, items[0])
        Z[f"{c.code}:subsidy"] = fp.subsidy
        net = fp.net_transfer
        for k, g in enumerate(c.groups):
            Z[f"{c.code}:net:{g.label}"] = net[k]
    return Z


def residual(system: SystemGraph, X: dict, Z: dict, nonlinear: bool = False) -> np.ndarray:
    targets, _, _ = _model(system, X, Z, nonlinear=nonlinear)
    return np.concatenate([targets[t] for t in system.targets])


def stack(system: SystemGraph, X: dict) -> np.ndarray:
    return np.concatenate([X[u] for u in system.unknowns])


def unstack(system: SystemGraph, vec: np.ndarray) -> dict:
    return {name: vec[s] for name, s in system.unknown_slices().items()}


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


_SYSTEMS: "OrderedDict[str, SystemGraph]" = OrderedDict()
_SYSTEM_CACHE_SIZE = 3
DENSE_KEEP = 2000


def _system_key(countries, common, regime, indexation, options, T, hh) -> str:
    parts = [repr(countries), repr(common), np.asarray(regime.taylor_pi_path).tobytes().hex(),
             repr(regime.taylor_y), repr(regime.exogenous_rate), repr(indexation), repr(options), str(T),
             "none" if hh is None else f"{id(hh)}"]
    return "|".join(parts)


def _assemble_dense(system: SystemGraph) -> np.ndarray:
    """Dense ``F_X`` by forward accumulation, substituting the policy rate's Jacobian."""
    T, unknowns = system.T, system.unknowns
    X = {u: Linear.root(u, T) for u in unknowns}
    Z = {z: np.zeros(T) for z in system.shocks}
    exprs, i_expr = _symbolic(system, X, Z)
    if set(exprs) != set(system.targets):
        raise CalibrationError("target labels do not match the unknowns")
    F = np.zeros((system.size, system.size))
    IX = None if i_expr is None else i_expr.jacobian(unknowns)
    for k, t in enumerate(system.targets):
        F[k * T:(k + 1) * T] = _rows(exprs[t], unknowns, IX)
    return F


def assemble(countries: Sequence[CountryCalibration], common: CommonParams, scenario: ShockScenario,
             options: SolverOptions | None = None, hh: HouseholdJacobians | None = None,
             keep_dense: bool | None = None) -> SystemGraph:
    """Build and factorize ``F_X`` for the calibration and the scenario's monetary rule.

    Fiscal instruments and shock paths do not enter ``F_X``, so systems
    are cached and reused across scenarios that share the monetary rule,
    the indexation regime and the solver options.

    Raises
    ------
    SolverError
        If the rule violates the Taylor principle at the end of the horizon
        (the price level is then not pinned down) or ``F_X`` is numerically
        singular; the message includes the reciprocal condition estimate.
    """
    options = options or SolverOptions()
    options.validate()
    countries = list(countries)
    if not countries:
        raise CalibrationError("no countries to solve")
    for c in countries:
        c.validate()
    T = scenario.T
    regime = scenario.policy
    regime.validate(T)
    if options.demand == "hank" and hh is None:
        hh = household_jacobians(common, T)
    if options.demand == "hank" and hh[("C", "r")].shape[0] != T:
        raise CalibrationError(f"household Jacobians have horizon {hh[('C', 'r')].shape[0]}, expected {T}")
    key = _system_key(countries, common, regime, scenario.indexation, options, T, hh)
    if key in _SYSTEMS:
        _SYSTEMS.move_to_end(key)
        return _SYSTEMS[key]

    if not regime.exogenous_rate:
        terminal = float(regime.taylor_pi_path[-1])
        if terminal <= 1.0:
            raise SolverError(
                f"indeterminate system: terminal inflation response {terminal:g} <= 1 leaves the price level "
                "undetermined (Taylor principle)", rcond=0.0)
    K, Minv = _demand_matrices(common, hh, T, options.demand)
    Q = None
    if not regime.exogenous_rate:
        Q = np.linalg.inv(np.eye(T) - regime.taylor_y * K)
    unknowns = [u for c in countries for u in unknown_names(c)]
    targets = [t for c in countries for t in target_names(c)]
    system = SystemGraph(countries, common, regime, scenario.indexation, options, T, hh, unknowns, targets,
                         shock_names(countries), K, Minv, Q)

    F = _assemble_dense(system)
    n = system.size
    keep = n <= DENSE_KEEP if keep_dense is None else keep_dense
    if keep:
        system.F_X = F.copy()
    anorm = np.abs(F).sum(axis=0).max()
    lu, piv, info = lapack.dgetrf(F, overwrite_a=True)
    if info > 0:
        raise SolverError(f"F_X is exactly singular (zero pivot at {info})", rcond=0.0)
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    system.rcond = float(rcond)
    if not np.isfinite(rcond) or rcond < options.min_rcond:
        raise SolverError(f"F_X is numerically singular (reciprocal condition estimate {rcond:.3g})",
                          rcond=float(rcond))
    system.lu = (lu, piv)
    log.info("assembled %d x %d system (rcond %.3g)", n, n, rcond)
    _SYSTEMS[key] = system
    while len(_SYSTEMS) > _SYSTEM_CACHE_SIZE:
        _SYSTEMS.popitem(last=False)
    return system


def clear_cache() -> None:
    _SYSTEMS.clear()


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


COUNTRY_VARIABLES = ("pi_core", "pi_cpi", "pi_w", "x", "omega", "rwei", "pi_bar", "wedge_term", "level_term",
                     "p_services", "p_goods", "exports")


@dataclass
class TransitionResult:
    """Paths of one solved transition.

    ``countries`` maps a country code to its variables (see
    ``COUNTRY_VARIABLES``) plus one ``w:<group>`` wage level per group;
    ``union`` holds the policy rate deviation ``i``, union core inflation
    and the union output gap.
    """

    T: int
    countries: dict
    union: dict
    iterations: int = 0
    residual_norm: float = 0.0
    nonlinear: bool = False
    rcond: float = float("nan")
    meta: dict = field(default_factory=dict)

    def long_rows(self) -> list:
        rows = []
        for code in sorted(self.countries):
            for var in sorted(self.countries[code]):
                for t, v in enumerate(self.countries[code][var]):
                    rows.append((code, var, t, float(v)))
        for var in sorted(self.union):
            for t, v in enumerate(self.union[var]):
                rows.append(("union", var, t, float(v)))
        return rows

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["country", "variable", "quarter", "value"])
            for code, var, t, v in self.long_rows():
                writer.writerow([code, var, t, repr(v)])

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "nonlinear": self.nonlinear,
            "rcond": self.rcond,
            "meta": self.meta,
            "countries": {c: {k: list(map(float, v)) for k, v in sorted(d.items())}
                          for c, d in sorted(self.countries.items())},
            "union": {k: list(map(float, v)) for k, v in sorted(self.union.items())},
        }

    def to_json(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


def _collect(system: SystemGraph, X: dict, Z: dict, nonlinear: bool, iterations: int, norm: float) -> TransitionResult:
    _, outputs, _ = _model(system, X, Z, nonlinear=nonlinear)
    countries = {}
    union_x = 0.0
    weights = outputs["_union"]["weights"]
    for k, c in enumerate(system.countries):
        d = outputs[c.code]
        f = d["forcing"]
        eta = c.eta
        w_agg = sum(eta[j] * d["w"][j] for j in range(len(eta)))
        paths = {
            "pi_core": d["pi_core"],
            "pi_cpi": d["pi_cpi"],
            "pi_w": diff(w_agg),
            "x": d["x"],
            "omega": f.omega,
            "rwei": f.rwei,
            "pi_bar": f.pi_bar,
            "wedge_term": f.wedge,
            "level_term": f.level,
            "p_services": d["p_s"],
            "p_goods": d["p_d"],
            "exports": d["exports"],
        }
        for j, g in enumerate(c.groups):
            paths[f"w:{g.label}"] = d["w"][j]
        countries[c.code] = {key: np.asarray(v, float) * np.ones(system.T) for key, v in paths.items()}
        union_x = union_x + weights[k] * d["x"]
    union = {"i": np.asarray(outputs["_union"]["i"], float), "pi_core": outputs["_union"]["pi_core"],
             "x": union_x}
    return TransitionResult(system.T, countries, union, iterations, norm, nonlinear, system.rcond)


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------


def _lu_solve(system: SystemGraph, rhs: np.ndarray) -> np.ndarray:
    lu, piv = system.lu
    out, info = lapack.dgetrs(lu, piv, rhs)
    if info != 0:
        raise SolverError(f"LU back-substitution failed (info={info})")
    return out


def _linear_X(system: SystemGraph, Z: dict) -> dict:
    zero = {u: np.zeros(system.T) for u in system.unknowns}
    H0 = residual(system, zero, Z)
    return unstack(system, -_lu_solve(system, H0))


def solve_linear(countries: Sequence[CountryCalibration], common: CommonParams, scenario: ShockScenario,
                 options: SolverOptions | None = None, hh: HouseholdJacobians | None = None,
                 system: SystemGraph | None = None) -> TransitionResult:
    """First-order transition ``X = -F_X^{-1} F_Z Z``."""
    scenario.validate()
    system = system or assemble(countries, common, scenario, options, hh)
    Z = shock_values(system, scenario)
    X = _linear_X(system, Z)
    norm = float(np.max(np.abs(residual(system, X, Z)))) if system.size else 0.0
    out = _collect(system, X, Z, False, 0, norm)
    out.meta = {"method": "linear", "demand": system.options.demand, "employment": system.options.employment}
    return out


def _catchup_jacobian(system: SystemGraph, X: dict, Z: dict) -> np.ndarray:
    """Derivative of the catch-up terms in the wage targets at ``X`` (zero where inactive)."""
    common, T = system.common, system.T
    b_prime = system.catchup
    n = system.size
    J = np.zeros((n, n))
    col = {name: k for k, name in enumerate(system.unknowns)}
    row = {name: k for k, name in enumerate(system.targets)}
    lag_m = np.eye(T, k=-1)
    z_d, z_s = Z["z:d"], Z["z:s"]
    for c in system.countries:
        code = c.code
        p_s, p_d = X[f"{code}:p:services"], X[f"{code}:p:goods"]
        e_w = Z["z:e"] - Z[f"{code}:subsidy"]
        for k, g in enumerate(c.groups):
            w = X[f"{code}:w:{g.label}"]
            p_g = (g.alpha_e * cumulate(e_w) + g.alpha_d * (p_d + cumulate(z_d)) + g.alpha_s * (p_s + cumulate(z_s))
                   - cumulate(Z[f"{code}:net:{g.label}"]))
            active = (p_g - lag_m @ w - common.catchup_cushion > 0.0).astype(float)
            if not active.any():
                continue
            scale = -g.theta * b_prime * active[:, None]
            r = row[f"{code}:wage:{g.label}"] * T
            blocks = {f"{code}:p:goods": g.alpha_d * np.eye(T), f"{code}:p:services": g.alpha_s * np.eye(T),
                      f"{code}:w:{g.label}": -lag_m}
            for name, m in blocks.items():
                j = col[name] * T
                J[r:r + T, j:j + T] += scale * m
    return J


def _refresh(system: SystemGraph, X: dict, Z: dict) -> tuple:
    """LU factors of ``F_X`` plus the catch-up derivative at ``X``."""
    if system.F_X is not None:
        F = system.F_X.copy()
    else:
        F = _assemble_dense(system)
    F += _catchup_jacobian(system, X, Z)
    lu, piv, info = lapack.dgetrf(F, overwrite_a=True)
    if info > 0:
        raise SolverError(f"refreshed Jacobian is singular (zero pivot at {info})", rcond=0.0)
    return lu, piv


def solve_nonlinear(countries: Sequence[CountryCalibration], common: CommonParams, scenario: ShockScenario,
                    options: SolverOptions | None = None, hh: HouseholdJacobians | None = None,
                    system: SystemGraph | None = None) -> TransitionResult:
    """Transition with one-sided real-wage catch-up by quasi-Newton iteration.

    Starts from the linear solution and iterates ``X <- X - lam J^{-1} H(X)``
    where ``J`` is the steady-state ``F_X``, factorized once; ``lam`` is the
    damping factor while ``||H||_inf`` exceeds the damping threshold and one
    below. The catch-up acts on wage levels, so for large shocks the
    steady-state Jacobian can overshoot; if a step removes less than
    ``SLOW_PROGRESS * lam`` of the residual, the step is undone and ``J`` is refreshed with the catch-up
    derivative at the current iterate (a semi-smooth Newton step).

    Raises
    ------
    SolverError
        When ``max_iter`` iterations do not bring ``||H||_inf`` below the
        tolerance; the message reports the final residual norm.
    """
    scenario.validate()
    system = system or assemble(countries, common, scenario, options, hh)
    opts = system.options
    Z = shock_values(system, scenario)
    vec = stack(system, _linear_X(system, Z))
    lu = system.lu
    refreshes = 0
    H = residual(system, unstack(system, vec), Z, nonlinear=True)
    norm = float(np.max(np.abs(H))) if H.size else 0.0
    it = 0
    while norm >= opts.tol:
        if it >= opts.max_iter:
            raise SolverError(f"nonlinear solve did not converge in {opts.max_iter} iterations "
                              f"(final residual norm {norm:.3e})", residual=norm, iterations=it)
        it += 1
        lam = opts.damping if norm > opts.damping_threshold else 1.0
        step, info = lapack.dgetrs(lu[0], lu[1], H)
        trial = vec - lam * step
        H_new = residual(system, unstack(system, trial), Z, nonlinear=True)
        norm_new = float(np.max(np.abs(H_new)))
        if not norm_new < (1.0 - SLOW_PROGRESS * lam) * norm:
            lu = _refresh(system, unstack(system, vec), Z)
            refreshes += 1
            step, info = lapack.dgetrs(lu[0], lu[1], H)
            for _ in range(MAX_BACKTRACK):
                trial = vec - lam * step
                H_new = residual(system, unstack(system, trial), Z, nonlinear=True)
                norm_new = float(np.max(np.abs(H_new)))
                if norm_new < norm:
                    break
                lam *= 0.5
        vec, H, norm = trial, H_new, norm_new
    log.debug("nonlinear solve: %d iterations, %d Jacobian refreshes, residual %.2e", it, refreshes, norm)
    out = _collect(system, unstack(system, vec), Z, True, it, norm)
    out.meta = {"method": "nonlinear", "demand": opts.demand, "employment": opts.employment,
                "catchup": system.catchup, "jacobian_refreshes": refreshes}
    return out


def solve(countries, common, scenario, options=None, hh=None) -> TransitionResult:
    """Dispatch on ``scenario.nonlinear``."""
    fn = solve_nonlinear if scenario.nonlinear else solve_linear
    return fn(countries, common, scenario, options, hh)


def standard_twins(countries: Sequence[CountryCalibration], common: CommonParams) -> list:
    return [pooled_country(c, common.beta) for c in countries]


def run_standard_twin(countries: Sequence[CountryCalibration], common: CommonParams, scenario: ShockScenario,
                      options: SolverOptions | None = None, hh: HouseholdJacobians | None = None) -> TransitionResult:
    """Solve the pooled benchmark: common basket and reset rate, no amplification, no catch-up."""
    options = replace(options or SolverOptions(), catchup=0.0)
    return solve_linear(standard_twins(countries, common), common, scenario, options, hh)


def walras_residual(system: SystemGraph, result: TransitionResult, scenario: ShockScenario) -> float:
    """Goods-market residual recomputed from household consumption and exports.

    The demand block imposes goods-market clearing through the
    income-feedback inverse; rebuilding consumption directly from the
    household Jacobians at the solved paths checks that no market was lost.
    """
    if system.options.demand != "hank":
        return 0.0
    Z = shock_values(system, scenario)
    hh = system.hh
    worst = 0.0
    for c in system.countries:
        d = result.countries[c.code]
        x = d["x"]
        dr = result.union["i"] - lead(d["pi_cpi"])
        dC = hh.rate_jacobian @ dr + hh[("C", "w")] @ (hh.w_ss * x)
        for k, g in enumerate(c.groups):
            scale = 1.0 if g.mpc is None else g.mpc / hh.mpc
            dC = dC + c.eta[k] * scale * hh.C_ss * (hh[("C", "transfer")] @ Z[f"{c.code}:net:{g.label}"])
        implied = dC / hh.C_ss + c.sectors["goods"].gdp_weight * d["exports"]
        worst = max(worst, float(np.max(np.abs(x - implied))))
    return worst
