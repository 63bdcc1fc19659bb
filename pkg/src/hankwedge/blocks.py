"""Analytic sequence-space blocks.

Every block is written with matrix products, sums and scalar multiples
only, so it accepts either numeric paths (arrays of length ``T``) or
:class:`Linear` expressions. Feeding identity expressions through a block
yields its exact Jacobian; composing blocks this way is forward
accumulation along the model graph.

Price and wage variables are log deviations from steady state. Levels are
zero before quarter 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .calibration import (CalibrationError, CountryCalibration, Indexation, PolicyRegime, SectorParams,
                          ShockScenario, WorkerGroup, wage_slope)


# ---------------------------------------------------------------------------
# linear path expressions
# ---------------------------------------------------------------------------


class Linear:
    """Affine function of root paths: ``sum_k M_k z_k + const``.

    ``blocks`` maps a root name to a ``(T, T)`` matrix. Only matrix
    products from the left, sums and scalar multiples are supported, which
    is all the blocks need.
    """

    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, T: int, blocks: Mapping[str, np.ndarray] | None = None, const: np.ndarray | None = None):
        self.T = T
        self.blocks = dict(blocks or {})
        self.const = np.zeros(T) if const is None else np.asarray(const, float)

    @classmethod
    def root(cls, name: str, T: int) -> "Linear":
        return cls(T, {name: np.eye(T)})

    def __len__(self) -> int:
        return self.T

    def _coerce(self, other) -> "Linear":
        if isinstance(other, Linear):
            return other
        arr = np.broadcast_to(np.asarray(other, float), (self.T,))
        return Linear(self.T, const=arr.copy())

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.blocks)
        for k, m in other.blocks.items():
            out[k] = out[k] + m if k in out else m
        return Linear(self.T, out, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Linear(self.T, {k: -m for k, m in self.blocks.items()}, -self.const)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, scalar):
        if isinstance(scalar, Linear) or np.ndim(scalar) != 0:
            raise TypeError("Linear supports only scalar multiplication; use a matrix product")
        s = float(scalar)
        return Linear(self.T, {k: s * m for k, m in self.blocks.items()}, s * self.const)

    __rmul__ = __mul__

    def __rmatmul__(self, matrix):
        matrix = np.asarray(matrix, float)
        return Linear(self.T, {k: matrix @ m for k, m in self.blocks.items()}, matrix @ self.const)

    def jacobian(self, roots: Sequence[str], sizes: Mapping[str, int] | None = None) -> np.ndarray:
        """Horizontal stack of the blocks for ``roots`` (zeros where absent)."""
        cols = []
        for r in roots:
            n = self.T if sizes is None else sizes.get(r, self.T)
            cols.append(self.blocks.get(r, np.zeros((self.T, n))))
        return np.hstack(cols) if cols else np.zeros((self.T, 0))

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for k, m in self.blocks.items():
            out += m @ np.asarray(values[k], float)
        return out


def path_length(v) -> int:
    return v.T if isinstance(v, Linear) else len(v)


@lru_cache(maxsize=32)
def _lag(T: int) -> np.ndarray:
    return np.eye(T, k=-1)


@lru_cache(maxsize=32)
def _lead(T: int) -> np.ndarray:
    return np.eye(T, k=1)


@lru_cache(maxsize=32)
def _cumsum(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T)))


def lag(v):
    """``v_{t-1}`` with ``v_{-1} = 0``."""
    return _lag(path_length(v)) @ v


def lead(v):
    """``v_{t+1}`` with ``v_T = 0`` (steady state after the horizon)."""
    return _lead(path_length(v)) @ v


def diff(v):
    """First difference of a level path, ``v_t - v_{t-1}``."""
    return v - lag(v)


def cumulate(v):
    """Level path from a path of changes."""
    return _cumsum(path_length(v)) @ v


def _check_lengths(*paths) -> int:
    lengths = {path_length(p) for p in paths if p is not None}
    if len(lengths) != 1:
        raise CalibrationError(f"path length mismatch: {sorted(lengths)}")
    return lengths.pop()


# ---------------------------------------------------------------------------
# wages
# ---------------------------------------------------------------------------


def type_wage_pc_residual(group: WorkerGroup, pi_w, pi_exp, x, beta: float, omega_coef: float,
                          iota=None, catchup=None):
    """Type-level wage Phillips-curve residual.

    ``(pi_w - iota) - beta (pi_w - iota)_{t+1} - kappa_g omega_hat - theta_g pi_exp - theta_g catchup``
    with ``omega_hat = omega_coef * x`` and ``kappa_g`` from :func:`wage_slope`.

    Parameters
    ----------
    pi_exp : path
        Experienced-inflation forcing, already including expectation
        amplification and any indexation scaling.
    iota : path, optional
        Indexation received by workers who do not reset.
    catchup : path, optional
        Extra reset-wage increase from real-wage catch-up.
    """
    _check_lengths(pi_w, pi_exp, x, iota, catchup)
    net = pi_w if iota is None else pi_w - iota
    res = net - beta * lead(net) - (wage_slope(group, beta) * omega_coef) * x - group.theta * pi_exp
    if catchup is not None:
        res = res - group.theta * catchup
    return res


@dataclass
class WageForcing:
    """Per-group experienced-inflation forcing and indexation paths for the wage block."""

    forcing: list
    iota: list
    level: np.ndarray
    wedge: np.ndarray
    pi_bar: np.ndarray
    omega: np.ndarray
    rwei: np.ndarray


def amplified_experienced(country: CountryCalibration, pi_tilde: np.ndarray) -> np.ndarray:
    """``pi_bar + (1 + phi_g)(pi_g - pi_bar)``: sensitivity amplifies each group's deviation from the mean."""
    pi_bar = country.eta @ pi_tilde
    return pi_bar[None, :] + (1.0 + country.phi)[:, None] * (pi_tilde - pi_bar[None, :])


def apply_indexation(indexation: Indexation, country: CountryCalibration, pi_tilde: Sequence) -> WageForcing:
    """Combine experienced inflation, amplification and indexation into wage-block inputs.

    Under CPI indexation with weight ``gamma`` non-resetters receive
    ``gamma * pi_bar_{t-1}`` and the level term is scaled by ``1 - gamma``;
    under type-specific indexation they receive ``gamma * pi_g,{t-1}`` and
    both the level and the wedge terms are scaled by ``1 - gamma``.

    ``pi_tilde`` holds one experienced-inflation path per group (arrays or
    :class:`Linear` expressions).
    """
    indexation.validate()
    eta, theta, phi = country.eta, country.theta, country.phi
    G = len(country.groups)
    if len(pi_tilde) != G:
        raise CalibrationError(f"{country.code}: {len(pi_tilde)} experienced-inflation paths for {G} groups")
    theta_bar = float(eta @ theta)
    weights = eta * theta / theta_bar
    pi_bar = sum(eta[k] * pi_tilde[k] for k in range(G))
    dev = [pi_tilde[k] - pi_bar for k in range(G)]
    g_cpi, g_type = indexation.cpi_gamma, indexation.type_gamma
    level_scale = 1.0 - g_cpi - g_type
    wedge_scale = 1.0 - g_type
    forcing = [level_scale * pi_bar + (wedge_scale * (1.0 + phi[k])) * dev[k] for k in range(G)]
    if g_cpi:
        iota = [g_cpi * lag(pi_bar) for _ in range(G)]
    elif g_type:
        iota = [g_type * lag(pi_tilde[k]) for k in range(G)]
    else:
        iota = [None] * G
    return WageForcing(
        forcing=forcing,
        iota=iota,
        level=(theta_bar * level_scale) * pi_bar,
        wedge=sum((eta[k] * theta[k] * wedge_scale * (1.0 + phi[k])) * dev[k] for k in range(G)),
        pi_bar=pi_bar,
        omega=sum((wedge_scale * (weights[k] - eta[k])) * pi_tilde[k] for k in range(G)),
        rwei=sum(weights[k] * pi_tilde[k] for k in range(G)),
    )


@dataclass
class AggregateWage:
    residual: object
    gap: object
    level: object
    wedge: object
    expected_next: object
    pi_w: object


def aggregate_wage_pc(country: CountryCalibration, pi_w_groups: Sequence, pi_exp_groups: Sequence, x,
                      beta: float, omega_coef: float, pi_tilde: np.ndarray | None = None) -> AggregateWage:
    """Population-weighted sum of type residuals with its decomposition.

    The gap term is ``kappa_tilde omega_hat``; the level and wedge terms
    split ``sum_g eta_g theta_g pi_exp_g`` into ``theta_bar pi_bar`` and
    the reset-weighted deviation. When ``pi_tilde`` (raw experienced
    inflation) is given, the level term uses its population mean, so with
    no amplification the wedge term is exactly ``theta_bar * Omega``.
    """
    eta, theta = country.eta, country.theta
    theta_bar = float(eta @ theta)
    res = 0.0
    for k, g in enumerate(country.groups):
        res = res + eta[k] * type_wage_pc_residual(g, pi_w_groups[k], pi_exp_groups[k], x, beta, omega_coef)
    kappa_tilde = float(sum(g.eta * wage_slope(g, beta) for g in country.groups))
    total = sum(eta[k] * theta[k] * np.asarray(pi_exp_groups[k], float) for k in range(len(eta)))
    base = np.asarray(pi_exp_groups, float) if pi_tilde is None else np.atleast_2d(pi_tilde)
    level = theta_bar * (eta @ base)
    pi_w = sum(eta[k] * pi_w_groups[k] for k in range(len(eta)))
    return AggregateWage(
        residual=res,
        gap=(kappa_tilde * omega_coef) * x,
        level=level,
        wedge=total - level,
        expected_next=beta * lead(pi_w),
        pi_w=pi_w,
    )


def expectations(group: WorkerGroup, dp, lambda_e: float, pi_bar, phi: float | None = None) -> np.ndarray:
    """Expected inflation ``pi_bar_t + phi_g * pi_tilde_g,t`` of one group.

    ``dp`` is a ``(3, T)`` array of item price changes (e, d, s).
    """
    phi = group.phi if phi is None else phi
    weights = group.alpha() * np.array([lambda_e, 1.0, 1.0])
    return np.asarray(pi_bar, float) + phi * (weights @ np.asarray(dp, float))


def nonlinear_reset(w_lin, p_g, w_lag, b_catchup: float, cushion: float = 0.0):
    """Reset wage with one-sided catch-up: ``w_lin + b' max(p_g - w_lag - cushion, 0)``."""
    return np.asarray(w_lin, float) + b_catchup * np.maximum(np.asarray(p_g) - np.asarray(w_lag) - cushion, 0.0)


def catchup_gap(p_g: np.ndarray, w_g: np.ndarray, cushion: float) -> np.ndarray:
    """``max(p_g,t - w_g,t-1 - cushion, 0)``: how far a group's real wage has fallen behind."""
    return np.maximum(p_g - lag(w_g) - cushion, 0.0)


# ---------------------------------------------------------------------------
# prices
# ---------------------------------------------------------------------------


def price_slope(sector: SectorParams, beta: float) -> float:
    """Calvo slope ``(1 - s)(1 - beta s)/s`` with stickiness ``s = 1 - calvo_reset``."""
    s = sector.stickiness
    return (1.0 - s) * (1.0 - beta * s) / s


def marginal_cost(sector: SectorParams, w_j, p_own, p_other, p_e, own: str):
    """Log real marginal cost of a sector: labor plus an intermediate bundle, less its own price."""
    xi = sector.io_weights
    other = "goods" if own == "services" else "services"
    bundle = xi[own] * p_own + xi[other] * p_other + xi["essentials"] * p_e
    return sector.labor_share * w_j + (1.0 - sector.labor_share) * bundle - p_own


def sector_price_residual(sector: SectorParams, p_own, w_j, p_other, p_e, beta: float, own: str | None = None):
    """Sectoral Calvo pricing residual ``pi_t - beta pi_{t+1} - kappa_p mc_t`` in price levels."""
    _check_lengths(p_own, w_j, p_other, p_e)
    own = own or sector.name
    pi = diff(p_own)
    return pi - beta * lead(pi) - price_slope(sector, beta) * marginal_cost(sector, w_j, p_own, p_other, p_e, own)


def leontief_levels(sectors: Mapping[str, SectorParams], w: Mapping[str, float], p_e: float = 0.0) -> dict:
    """Long-run sector price levels for constant wages: solves ``p = L (alpha w + (1-alpha) xi_e p_e)``."""
    names = ("services", "goods")
    A = np.zeros((2, 2))
    b = np.zeros(2)
    for i, n in enumerate(names):
        s = sectors[n]
        for j, m in enumerate(names):
            A[i, j] = (1.0 - s.labor_share) * s.io_weights[m]
        b[i] = s.labor_share * w[n] + (1.0 - s.labor_share) * s.io_weights["essentials"] * p_e
    p = np.linalg.solve(np.eye(2) - A, b)
    return dict(zip(names, p))


def core_inflation(country: CountryCalibration, p_services, p_goods, z_goods=None, z_services=None):
    """GDP-weighted inflation of domestic consumer prices."""
    ws = country.sectors["services"].gdp_weight
    wd = country.sectors["goods"].gdp_weight
    pis = diff(p_services) if z_services is None else diff(p_services) + z_services
    pid = diff(p_goods) if z_goods is None else diff(p_goods) + z_goods
    return ws * pis + wd * pid


# ---------------------------------------------------------------------------
# demand, policy, trade, fiscal
# ---------------------------------------------------------------------------


def is_residual(x, i, pi_expected, r_natural, sigma: float):
    """Representative-household Euler residual ``x_t - x_{t+1} + (i_t - E pi_{t+1} - r^n_t)/sigma``."""
    _check_lengths(x, i, pi_expected, r_natural)
    return x - lead(x) + (1.0 / sigma) * (i - pi_expected - r_natural)


def taylor_rate(regime: PolicyRegime, pi_union, x_union, r_star: float = 0.0):
    """Union policy rate ``r* + phi_pi,t pi + phi_y x``; ``phi_pi,t`` may vary by quarter."""
    T = path_length(pi_union)
    phi_pi = np.asarray(regime.taylor_pi_path, float)
    if len(phi_pi) != T:
        raise CalibrationError(f"taylor_pi_path length {len(phi_pi)} != {T}")
    return r_star + np.diag(phi_pi) @ pi_union + regime.taylor_y * x_union


def trade_demand(countries: Sequence[CountryCalibration], p_goods: Mapping[str, object], eps_trade: float) -> dict:
    """Log export demand for each country's goods: ``-eps (p_d,c - sum_c' w_cc' p_d,c')``.

    Partners missing from ``p_goods`` (for example the rest of the world)
    have a zero price deviation.
    """
    out = {}
    for c in countries:
        ref = 0.0
        for partner, share in c.trade_shares.items():
            if partner in p_goods and share:
                ref = ref + share * p_goods[partner]
        out[c.code] = (-eps_trade) * (p_goods[c.code] - ref)
    return out


@dataclass
class FiscalPaths:
    """Worker-side consequences of fiscal policy.

    ``essentials`` is the essentials inflation workers face after the
    subsidy; ``net_transfer`` holds each group's transfer net of the tax,
    in units of price-index inflation it offsets; ``tax`` is the per-capita
    levy that balances the budget.
    """

    essentials: np.ndarray
    subsidy: np.ndarray
    transfers: np.ndarray
    tax: np.ndarray

    @property
    def net_transfer(self) -> np.ndarray:
        return self.transfers - self.tax[None, :]


def fiscal_apply(regime: PolicyRegime, country: CountryCalibration, essentials: np.ndarray) -> FiscalPaths:
    """Subsidy and transfer paths for one country.

    The subsidy cuts the essentials price workers pay by the fraction
    ``subsidy`` from quarter 0 onward, so their essentials inflation falls
    by ``subsidy`` on impact and is unchanged afterwards. A transfer
    budget of ``amount * alpha_bar_e * u_t`` per capita (that share of the
    average essentials cost increase) is paid either to everyone or to the
    named group and financed by a uniform levy. Nothing is paid when the
    shock is zero.
    """
    u = np.asarray(essentials, float)
    G = len(country.groups)
    T = len(u)
    subsidy = np.zeros(T)
    transfers = np.zeros((G, T))
    tax = np.zeros(T)
    if not np.any(u):
        return FiscalPaths(u.copy(), subsidy, transfers, tax)
    subsidy[0] = regime.subsidy
    tr = regime.transfer
    if tr.kind != "none" and tr.amount:
        budget = tr.amount * float(country.eta @ country.alpha[:, 0]) * u
        tax = budget
        if tr.kind == "uniform":
            transfers[:] = budget
        else:
            k = country.group_index(tr.group)
            transfers[k] = budget / country.groups[k].eta
    return FiscalPaths(u - subsidy, subsidy, transfers, tax)


def experienced_paths(country: CountryCalibration, items: Sequence, lambda_e: float,
                      net_transfer: Sequence | None = None) -> list:
    """Salient experienced inflation of each group from worker-side item price changes.

    ``items`` holds the essentials, goods and services paths; the result
    has one path per group, net of any compensating transfer.
    """
    out = []
    for k, g in enumerate(country.groups):
        path = (lambda_e * g.alpha_e) * items[0] + g.alpha_d * items[1] + g.alpha_s * items[2]
        if net_transfer is not None:
            path = path - net_transfer[k]
        out.append(path)
    return out
