"""Heterogeneous-household consumption-savings block.

One-asset incomplete-markets problem with a zero borrowing limit, solved
with endogenous gridpoints; the stationary distribution uses the lottery
method, and sequence-space Jacobians come from the fake-news algorithm.

Timing: ``r_t`` is the ex-ante real return on savings chosen in quarter
``t``, credited in ``t + 1``. Income is ``w_t e + transfer_t``; hours are
fixed at one per efficiency unit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .calibration import CommonParams, WorkerGroup

log = logging.getLogger(__name__)

INPUTS = ("r", "w", "transfer")
OUTPUTS = ("C", "A")
POLICY_TOL = 1e-10
DIST_TOL = 1e-12
FD_STEP = 1e-5


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap."""


@dataclass(frozen=True)
class IncomeProcess:
    """Discretized log-productivity process."""

    grid: np.ndarray
    transition: np.ndarray
    stationary: np.ndarray

    @property
    def levels(self) -> np.ndarray:
        """Productivity levels normalized to unit mean under the stationary law."""
        e = np.exp(self.grid)
        return e / (self.stationary @ e)


@dataclass
class HouseholdSteadyState:
    process: IncomeProcess
    a_grid: np.ndarray
    beta: float
    sigma: float
    r: float
    w: float
    c: np.ndarray
    a_next: np.ndarray
    D: np.ndarray
    iterations: dict = field(default_factory=dict)

    @property
    def C(self) -> float:
        return float(np.sum(self.D * self.c))

    @property
    def A(self) -> float:
        return float(np.sum(self.D * self.a_next))

    @property
    def e_levels(self) -> np.ndarray:
        return self.process.levels

    def cash_on_hand(self) -> np.ndarray:
        return (1.0 + self.r) * self.a_grid[None, :] + self.w * self.e_levels[:, None]

    def mpc(self) -> float:
        """Impact marginal propensity to consume out of a one-quarter transfer."""
        return float(fake_news_jacobian(self, "transfer", "C", 1)[0, 0])

    def euler_residual(self) -> np.ndarray:
        """``u'(c) - beta (1+r) E u'(c')``; zero off the constraint, non-negative on it."""
        uc = self.c ** (-self.sigma)
        emu = expected_marginal_utility(self.a_next, self.a_grid, self.c, self.process.transition, self.sigma)
        return uc - self.beta * (1.0 + self.r) * emu


def rouwenhorst(rho: float, sigma: float, n: int) -> IncomeProcess:
    """Rouwenhorst discretization of ``x' = rho x + eps``.

    Parameters
    ----------
    rho : float
        Persistence, ``|rho| < 1``.
    sigma : float
        Standard deviation of the innovation.
    n : int
        Number of states, at least 2.
    """
    if n < 2:
        raise ValueError(f"rouwenhorst needs n >= 2, got {n}")
    if not (-1.0 < rho < 1.0):
        raise ValueError(f"rouwenhorst needs |rho| < 1, got {rho}")
    p = (1.0 + rho) / 2.0
    P = np.array([[p, 1.0 - p], [1.0 - p, p]])
    for m in range(3, n + 1):
        Q = np.zeros((m, m))
        Q[:-1, :-1] += p * P
        Q[:-1, 1:] += (1.0 - p) * P
        Q[1:, :-1] += (1.0 - p) * P
        Q[1:, 1:] += p * P
        Q[1:-1] /= 2.0
        P = Q
    sd = sigma / np.sqrt(1.0 - rho**2)
    psi = sd * np.sqrt(n - 1.0)
    grid = np.linspace(-psi, psi, n)
    # the stationary law is binomial(n-1, 1/2)
    k = np.arange(n)
    logc = np.array([np.sum(np.log(np.arange(1, n))) - np.sum(np.log(np.arange(1, j + 1)))
                     - np.sum(np.log(np.arange(1, n - j))) for j in k])
    stationary = np.exp(logc - (n - 1) * np.log(2.0))
    stationary /= stationary.sum()
    return IncomeProcess(grid, P, stationary)


def income_process(common: CommonParams) -> IncomeProcess:
    """Income process of the calibration; ``sigma_e`` is the cross-sectional s.d. of log productivity."""
    innovation = common.sigma_e * np.sqrt(1.0 - common.rho_e**2)
    return rouwenhorst(common.rho_e, innovation, common.n_e)


def asset_grid(n_a: int, a_max: float) -> np.ndarray:
    """Quadratically spaced grid ``a_max (i / (n_a - 1))**2`` starting at the borrowing limit."""
    i = np.arange(n_a, dtype=float)
    return a_max * (i / (n_a - 1)) ** 2


def interp_extrap(x: np.ndarray, xp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation with linear extrapolation at both ends."""
    idx = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, len(xp) - 2)
    x0, x1 = xp[idx], xp[idx + 1]
    return fp[idx] + (fp[idx + 1] - fp[idx]) * (x - x0) / (x1 - x0)


def expected_marginal_utility(a_next: np.ndarray, a_grid: np.ndarray, c: np.ndarray, Pi: np.ndarray,
                              sigma: float) -> np.ndarray:
    """``E[c'(a', e')**-sigma | e]`` at each chosen ``a'``, interpolating next quarter's policy."""
    out = np.empty_like(a_next)
    for e in range(a_next.shape[0]):
        vals = np.array([interp_extrap(a_next[e], a_grid, c[k]) for k in range(c.shape[0])])
        out[e] = Pi[e] @ vals ** (-sigma)
    return out


def egm_step(c_next: np.ndarray, a_grid: np.ndarray, e_levels: np.ndarray, Pi: np.ndarray,
             beta: float, sigma: float, r_ante: float, r_post: float, w: float,
             transfer: float) -> tuple[np.ndarray, np.ndarray]:
    """One endogenous-gridpoint backward step.

    Parameters
    ----------
    c_next : ndarray
        Consumption policy next quarter on the ``(n_e, n_a)`` grid.
    r_ante : float
        Return on savings chosen this quarter.
    r_post : float
        Return credited this quarter on assets brought in.

    Returns
    -------
    c, a_next : ndarray
        Consumption and savings policies this quarter.
    """
    expected = Pi @ c_next ** (-sigma)
    c_endo = (beta * (1.0 + r_ante) * expected) ** (-1.0 / sigma)
    coh_endo = c_endo + a_grid[None, :]
    coh = (1.0 + r_post) * a_grid[None, :] + w * e_levels[:, None] + transfer
    a_next = np.empty_like(coh)
    for e in range(len(e_levels)):
        a_next[e] = interp_extrap(coh[e], coh_endo[e], a_grid)
    a_next = np.clip(a_next, 0.0, a_grid[-1])
    return coh - a_next, a_next


def solve_policy(e_levels, Pi, a_grid, beta, sigma, r, w, transfer=0.0, tol=POLICY_TOL,
                 max_iter=100_000) -> tuple[np.ndarray, np.ndarray, int]:
    """Iterate the EGM step to a stationary policy (sup-norm change below ``tol``)."""
    coh = (1.0 + r) * a_grid[None, :] + w * e_levels[:, None] + transfer
    c = np.maximum(0.05 * coh, 1e-8) + r * a_grid[None, :]
    for it in range(1, max_iter + 1):
        c_new, a_next = egm_step(c, a_grid, e_levels, Pi, beta, sigma, r, r, w, transfer)
        diff = np.max(np.abs(c_new - c))
        c = c_new
        if diff < tol:
            return c, a_next, it
    raise ConvergenceError(f"EGM did not converge in {max_iter} iterations (last change {diff:.3g})")


def lottery(a_next: np.ndarray, a_grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lower bracketing index and the weight placed on it for each savings choice."""
    n_a = len(a_grid)
    idx = np.clip(np.searchsorted(a_grid, a_next, side="right") - 1, 0, n_a - 2)
    weight = (a_grid[idx + 1] - a_next) / (a_grid[idx + 1] - a_grid[idx])
    return idx, np.clip(weight, 0.0, 1.0)


def forward_operator(a_next: np.ndarray, a_grid: np.ndarray, Pi: np.ndarray) -> sparse.csr_matrix:
    """Sparse matrix mapping this quarter's distribution (flattened, e-major) to the next."""
    n_e, n_a = a_next.shape
    idx, wgt = lottery(a_next, a_grid)
    rows, cols, vals = [], [], []
    src = np.arange(n_e * n_a).reshape(n_e, n_a)
    for e in range(n_e):
        for e2 in range(n_e):
            p = Pi[e, e2]
            if p == 0.0:
                continue
            rows.append(e2 * n_a + idx[e])
            cols.append(src[e])
            vals.append(p * wgt[e])
            rows.append(e2 * n_a + idx[e] + 1)
            cols.append(src[e])
            vals.append(p * (1.0 - wgt[e]))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n_e * n_a, n_e * n_a))


def forward_step(D: np.ndarray, a_next: np.ndarray, a_grid: np.ndarray, Pi: np.ndarray) -> np.ndarray:
    """Advance the distribution one quarter by the lottery and the income transition."""
    n_e, n_a = D.shape
    idx, wgt = lottery(a_next, a_grid)
    low = D * wgt
    high = D - low
    moved = np.zeros_like(D)
    for e in range(n_e):
        moved[e] = np.bincount(idx[e], weights=low[e], minlength=n_a)
        moved[e] += np.bincount(idx[e] + 1, weights=high[e], minlength=n_a)
    return Pi.T @ moved


def stationary_distribution(a_next, a_grid, Pi, stationary_e, tol=DIST_TOL, max_iter=200_000):
    """Iterate the forward operator from a uniform-in-assets start until the L1 change is below ``tol``."""
    n_e, n_a = a_next.shape
    M = forward_operator(a_next, a_grid, Pi)
    D = np.outer(stationary_e, np.full(n_a, 1.0 / n_a)).ravel()
    for it in range(1, max_iter + 1):
        D_new = M @ D
        diff = np.abs(D_new - D).sum()
        D = D_new
        if diff < tol:
            return D.reshape(n_e, n_a), it
    raise ConvergenceError(f"distribution did not converge in {max_iter} iterations (L1 change {diff:.3g})")


def solve_steady_state(common: CommonParams, group: WorkerGroup | None = None, r_ss: float | None = None,
                       w_ss: float = 1.0) -> HouseholdSteadyState:
    """Stationary household policies, distribution and aggregates.

    ``group`` is accepted for symmetry with the wage block; every group
    shares the same homothetic household problem.
    """
    r = common.r_ss if r_ss is None else float(r_ss)
    if common.beta * (1.0 + r) >= 1.0:
        raise ValueError(f"beta (1 + r) = {common.beta * (1 + r):.6f} must be below 1")
    process = income_process(common)
    grid = asset_grid(common.n_a, common.a_max)
    c, a_next, it_pol = solve_policy(process.levels, process.transition, grid, common.beta,
                                     common.sigma, r, w_ss)
    D, it_dist = stationary_distribution(a_next, grid, process.transition, process.stationary)
    return HouseholdSteadyState(process, grid, common.beta, common.sigma, r, w_ss, c, a_next, D,
                                {"policy": it_pol, "distribution": it_dist})


# ---------------------------------------------------------------------------
# transitions and Jacobians
# ---------------------------------------------------------------------------


def _step(ss: HouseholdSteadyState, c_next, r_ante=None, r_post=None, w=None, transfer=0.0):
    return egm_step(c_next, ss.a_grid, ss.e_levels, ss.process.transition, ss.beta, ss.sigma,
                    ss.r if r_ante is None else r_ante, ss.r if r_post is None else r_post,
                    ss.w if w is None else w, transfer)


def transition(ss: HouseholdSteadyState, r=None, w=None, transfer=None, T: int | None = None) -> dict:
    """Aggregate consumption and assets along a perfect-foresight path.

    Paths not given stay at their steady-state values; the economy is back
    in steady state after the last date.
    """
    paths = {"r": r, "w": w, "transfer": transfer}
    T = T or max(len(p) for p in paths.values() if p is not None)
    r = np.full(T, ss.r) if r is None else np.asarray(r, float)
    w = np.full(T, ss.w) if w is None else np.asarray(w, float)
    tr = np.zeros(T) if transfer is None else np.asarray(transfer, float)
    c_next = ss.c
    pols = [None] * T
    for t in range(T - 1, -1, -1):
        r_post = ss.r if t == 0 else r[t - 1]
        c, a = _step(ss, c_next, r[t], r_post, w[t], tr[t])
        pols[t] = (c, a)
        c_next = c
    D = ss.D
    C = np.empty(T)
    A = np.empty(T)
    for t in range(T):
        c, a = pols[t]
        C[t] = np.sum(D * c)
        A[t] = np.sum(D * a)
        D = forward_step(D, a, ss.a_grid, ss.process.transition)
    return {"C": C, "A": A}


def _primitive_shock(ss, name, sign):
    h = sign * FD_STEP
    if name == "r_ante":
        return _step(ss, ss.c, r_ante=ss.r + h)
    if name == "r_post":
        return _step(ss, ss.c, r_post=ss.r + h)
    if name == "w":
        return _step(ss, ss.c, w=ss.w + h)
    if name == "transfer":
        return _step(ss, ss.c, transfer=h)
    raise ValueError(f"unknown household input {name!r}; expected one of {INPUTS}")


def _fake_news(ss: HouseholdSteadyState, primitive: str, output: str, T: int) -> np.ndarray:
    """Fake-news matrix for one primitive input (central differences in the backward sweep)."""
    n_e, n_a = ss.c.shape
    cp, ap = _primitive_shock(ss, primitive, +1)
    cm, am = _primitive_shock(ss, primitive, -1)
    dc = (cp - cm) / (2 * FD_STEP)
    da = (ap - am) / (2 * FD_STEP)
    y_ss = ss.c if output == "C" else ss.a_next
    idx, _ = lottery(ss.a_next, ss.a_grid)
    gap = ss.a_grid[idx + 1] - ss.a_grid[idx]
    Pi = ss.process.transition

    curlyY = np.empty(T)
    curlyD = np.empty((T, n_e, n_a))
    for u in range(T):
        dy = dc if output == "C" else da
        curlyY[u] = np.sum(ss.D * dy)
        # moving savings up by da shifts mass from the lower to the upper gridpoint
        shift = ss.D * da / gap
        moved = np.zeros((n_e, n_a))
        for e in range(n_e):
            moved[e] = np.bincount(idx[e], weights=-shift[e], minlength=n_a)
            moved[e] += np.bincount(idx[e] + 1, weights=shift[e], minlength=n_a)
        curlyD[u] = Pi.T @ moved
        if u + 1 < T:
            cp, ap = _step(ss, ss.c + FD_STEP * dc)
            cm, am = _step(ss, ss.c - FD_STEP * dc)
            dc, da = (cp - cm) / (2 * FD_STEP), (ap - am) / (2 * FD_STEP)

    # expectation vectors E_k = Lambda^k y_ss
    _, wgt = lottery(ss.a_next, ss.a_grid)
    E = np.empty((T, n_e, n_a))
    E[0] = y_ss
    for k in range(1, T):
        g = Pi @ E[k - 1]
        E[k] = wgt * np.take_along_axis(g, idx, axis=1) + (1 - wgt) * np.take_along_axis(g, idx + 1, axis=1)

    F = np.empty((T, T))
    F[0] = curlyY
    if T > 1:
        F[1:] = E[: T - 1].reshape(T - 1, -1) @ curlyD.reshape(T, -1).T
    J = F.copy()
    for t in range(1, T):
        J[t, 1:] += J[t - 1, :-1]
    return J


def fake_news_jacobian(ss: HouseholdSteadyState, input: str, output: str, T: int) -> np.ndarray:
    """Sequence-space Jacobian of aggregate ``output`` with respect to ``input``.

    Column ``s`` is the response of the output path to a unit change of the
    input in quarter ``s`` alone, with perfect foresight.

    Parameters
    ----------
    input : {"r", "w", "transfer"}
    output : {"C", "A"}
    T : int
        Horizon.
    """
    if input not in INPUTS:
        raise ValueError(f"unknown household input {input!r}; expected one of {INPUTS}")
    if output not in OUTPUTS:
        raise ValueError(f"unknown household output {output!r}; expected one of {OUTPUTS}")
    if T < 1:
        raise ValueError("T must be at least 1")
    if input != "r":
        return _fake_news(ss, input, output, T)
    # a date-s ex-ante rate moves the Euler equation at s and the return credited at s + 1
    J = _fake_news(ss, "r_ante", output, T)
    if T > 1:
        post = _fake_news(ss, "r_post", output, T)
        J[:, :-1] += post[:, 1:]
    return J


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

HOUSEHOLD_KEYS = ("beta", "sigma", "rho_e", "sigma_e", "n_e", "n_a", "a_max", "r_ss")


def cache_key(common: CommonParams, T: int, w_ss: float = 1.0) -> str:
    payload = {k: asdict(common)[k] for k in HOUSEHOLD_KEYS}
    payload.update(T=int(T), w_ss=float(w_ss), version=1)
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def save_jacobians(directory: Path, key: str, jacs: dict, meta: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    labels = sorted(jacs)
    T = next(iter(jacs.values())).shape[0]
    stack = np.stack([jacs[k] for k in labels]).astype("<f8")
    tmp = directory / f"{key}.bin.tmp"
    stack.tofile(tmp)
    tmp.replace(directory / f"{key}.bin")
    sidecar = {"labels": [list(k) for k in labels], "shape": [len(labels), T, T], "dtype": "float64",
               "order": "row-major", **meta}
    (directory / f"{key}.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_jacobians(directory: Path, key: str) -> tuple[dict, dict] | None:
    side = directory / f"{key}.json"
    blob = directory / f"{key}.bin"
    if not (side.is_file() and blob.is_file()):
        return None
    meta = json.loads(side.read_text(encoding="utf-8"))
    arr = np.fromfile(blob, dtype="<f8")
    shape = tuple(meta["shape"])
    if arr.size != np.prod(shape):
        log.warning("ignoring truncated Jacobian cache %s", blob)
        return None
    arr = arr.reshape(shape)
    return {tuple(lbl): arr[i] for i, lbl in enumerate(meta["labels"])}, meta


@dataclass
class HouseholdJacobians:
    """Steady-state aggregates and the Jacobians the general-equilibrium block uses."""

    C_ss: float
    A_ss: float
    w_ss: float
    mpc: float
    J: dict

    def __getitem__(self, key):
        return self.J[key]

    @property
    def rate_jacobian(self) -> np.ndarray:
        """Consumption response to the real rate net of the interest cost of debt.

        Household assets are government bonds. The interest on ``A_ss``
        promised by the rate in quarter ``t`` is paid in ``t + 1`` and
        financed by a uniform lump-sum tax, so a rate change carries no
        aggregate income effect.
        """
        J_r, J_T = self.J[("C", "r")], self.J[("C", "transfer")]
        lag = np.eye(J_r.shape[0], k=-1)
        return J_r - self.A_ss * (J_T @ lag)


_MEMO: dict = {}


def household_jacobians(common: CommonParams, T: int, w_ss: float = 1.0,
                        cache_dir: str | Path | None = None) -> HouseholdJacobians:
    """Jacobians of C with respect to r, w and transfer, with optional on-disk caching.

    The cache directory defaults to the ``HANKWEDGE_CACHE`` environment
    variable; without it results are only memoized in-process.
    """
    key = cache_key(common, T, w_ss)
    if key in _MEMO:
        return _MEMO[key]
    cache_dir = cache_dir or os.environ.get("HANKWEDGE_CACHE")
    if cache_dir:
        hit = load_jacobians(Path(cache_dir), key)
        if hit is not None:
            jacs, meta = hit
            out = HouseholdJacobians(meta["C_ss"], meta["A_ss"], w_ss, meta["mpc"], jacs)
            _MEMO[key] = out
            return out
    ss = solve_steady_state(common, w_ss=w_ss)
    jacs = {("C", name): fake_news_jacobian(ss, name, "C", T) for name in INPUTS}
    out = HouseholdJacobians(ss.C, ss.A, w_ss, float(jacs[("C", "transfer")][0, 0]), jacs)
    log.info("household steady state: C=%.4f A=%.4f MPC=%.4f", ss.C, ss.A, out.mpc)
    if cache_dir:
        save_jacobians(Path(cache_dir), key, jacs, {"C_ss": out.C_ss, "A_ss": out.A_ss, "mpc": out.mpc, "T": T})
    _MEMO[key] = out
    return out
