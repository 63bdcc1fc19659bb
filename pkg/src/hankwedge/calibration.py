"""Calibration data model, ingestion and scenario helpers.

Everything downstream reads parameters from the dataclasses defined here.
A union directory looks like::

    union/
        common.json            flat CommonParams
        countries.csv          code,gdp_weight
        DE/groups.csv          label,eta,theta,alpha_e,alpha_d,alpha_s,sector,phi[,mpc]
        DE/sectors.csv         sector,labor_share,calvo_reset,xi_services,xi_goods,xi_essentials,gdp_weight
        DE/trade.csv           partner,share

If ``countries.csv`` is missing, every subdirectory holding a ``groups.csv``
is treated as a country with equal GDP weight.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

SECTORS = ("services", "goods")
ITEMS = ("e", "d", "s")
SHARE_TOL = 1e-12
QUARTERS_PER_YEAR = 4.0
GDP_TOL = 1e-9

GROUP_COLUMNS = ["label", "eta", "theta", "alpha_e", "alpha_d", "alpha_s", "sector", "phi"]
SECTOR_COLUMNS = [
    "sector",
    "labor_share",
    "calvo_reset",
    "xi_services",
    "xi_goods",
    "xi_essentials",
    "gdp_weight",
]


class CalibrationError(ValueError):
    """Raised when calibration data is missing or violates an invariant."""


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkerGroup:
    """One worker type (an income quintile in the bundled data).

    Parameters
    ----------
    label : str
        Identifier such as ``"Q1"``.
    eta : float
        Population share.
    theta : float
        Quarterly wage-reset probability.
    alpha_e, alpha_d, alpha_s : float
        Expenditure shares on essentials, goods and services.
    sector : str
        Sector of employment, ``"services"`` or ``"goods"``.
    phi : float
        Sensitivity of expectations to own experienced inflation.
    mpc : float, optional
        Impact marginal propensity to consume out of a transfer. When
        ``None`` the value computed by the household block is used.
    kappa : float, optional
        Override for the wage Phillips-curve slope. Only the pooled
        benchmark economy sets it, so that pooling preserves the aggregate
        slope of the economy it was built from.
    """

    label: str
    eta: float
    theta: float
    alpha_e: float
    alpha_d: float
    alpha_s: float
    sector: str
    phi: float
    mpc: float | None = None
    kappa: float | None = None

    def alpha(self) -> np.ndarray:
        return np.array([self.alpha_e, self.alpha_d, self.alpha_s])

    def validate(self, where: str = "") -> None:
        tag = f"{where}group {self.label!r}"
        if not (0.0 < self.eta <= 1.0):
            raise CalibrationError(f"{tag}: eta={self.eta} outside (0, 1]")
        if not (0.0 < self.theta < 1.0):
            raise CalibrationError(f"{tag}: theta={self.theta} outside (0, 1)")
        shares = (self.alpha_e, self.alpha_d, self.alpha_s)
        if min(shares) < 0.0:
            raise CalibrationError(f"{tag}: negative expenditure share {shares}")
        total = sum(shares)
        if abs(total - 1.0) > SHARE_TOL:
            raise CalibrationError(
                f"{tag}: expenditure shares sum to {total:.12g}, expected 1"
            )
        if self.sector not in SECTORS:
            raise CalibrationError(f"{tag}: unknown sector {self.sector!r}")
        if self.mpc is not None and not (0.0 <= self.mpc <= 1.0):
            raise CalibrationError(f"{tag}: mpc={self.mpc} outside [0, 1]")


@dataclass(frozen=True)
class SectorParams:
    """Technology and pricing parameters of one domestic sector.

    ``io_weights`` maps ``services``, ``goods`` and ``essentials`` to the
    shares of the intermediate bundle; they sum to one.
    """

    name: str
    labor_share: float
    calvo_reset: float
    io_weights: Mapping[str, float]
    gdp_weight: float
    centrality: float = float("nan")

    @property
    def essentials_input_share(self) -> float:
        return float(self.io_weights.get("essentials", 0.0))

    @property
    def stickiness(self) -> float:
        return 1.0 - self.calvo_reset

    def validate(self, where: str = "") -> None:
        tag = f"{where}sector {self.name!r}"
        if not (0.0 < self.labor_share < 1.0):
            raise CalibrationError(f"{tag}: labor_share={self.labor_share} outside (0, 1)")
        if not (0.0 < self.calvo_reset < 1.0):
            raise CalibrationError(f"{tag}: calvo_reset={self.calvo_reset} outside (0, 1)")
        total = sum(self.io_weights.values())
        if abs(total - 1.0) > SHARE_TOL:
            raise CalibrationError(f"{tag}: io weights sum to {total:.12g}, expected 1")
        if min(self.io_weights.values()) < 0.0:
            raise CalibrationError(f"{tag}: negative io weight")


@dataclass(frozen=True)
class CommonParams:
    """Parameters shared by every country of a union."""

    beta: float = 0.99
    sigma: float = 2.0
    phi_n: float = 0.5
    chi: float = 1.0
    eps_w: float = 6.0
    eps_trade: float = 1.5
    b_catchup: float = 0.15
    lambda_e: float = 1.3
    phi_bar: float = 0.35
    rho_e: float = 0.966
    sigma_e: float = 0.5
    n_e: int = 7
    n_a: int = 100
    a_max: float = 200.0
    r_ss: float = 0.005
    taylor_pi: float = 1.5
    taylor_y: float = 0.125
    horizon_T: int = 120
    loss_weight_x: float = 0.25
    catchup_cushion: float = 0.025

    def validate(self) -> None:
        if not (0.0 < self.beta < 1.0):
            raise CalibrationError(f"common: beta={self.beta} outside (0, 1)")
        for name in ("sigma", "phi_n", "chi", "eps_w", "eps_trade", "sigma_e", "a_max"):
            if getattr(self, name) <= 0.0:
                raise CalibrationError(f"common: {name} must be positive")
        if self.lambda_e < 0.0 or self.b_catchup < 0.0 or self.catchup_cushion < 0.0:
            raise CalibrationError("common: lambda_e, b_catchup, catchup_cushion must be >= 0")
        if not (-1.0 < self.rho_e < 1.0):
            raise CalibrationError(f"common: rho_e={self.rho_e} outside (-1, 1)")
        if self.horizon_T < 80:
            raise CalibrationError(f"common: horizon_T={self.horizon_T} below 80")
        if self.n_e < 2 or self.n_a < 3:
            raise CalibrationError("common: grids too small")
        if self.taylor_pi < 0.0 or self.taylor_y < 0.0:
            raise CalibrationError("common: Taylor coefficients must be >= 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "CommonParams":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise CalibrationError(f"common.json: unknown keys {unknown}")
        kwargs = {}
        for key, value in data.items():
            kwargs[key] = int(value) if known[key].type == "int" else float(value)
        params = cls(**kwargs)
        params.validate()
        return params


@dataclass(frozen=True)
class CountryCalibration:
    """A country's worker groups, sectors and trade links."""

    code: str
    gdp_weight: float
    groups: tuple[WorkerGroup, ...]
    sectors: Mapping[str, SectorParams]
    trade_shares: Mapping[str, float] = field(default_factory=dict)

    @property
    def eta(self) -> np.ndarray:
        return np.array([g.eta for g in self.groups])

    @property
    def theta(self) -> np.ndarray:
        return np.array([g.theta for g in self.groups])

    @property
    def alpha(self) -> np.ndarray:
        """(G, 3) matrix of expenditure shares in item order e, d, s."""
        return np.array([g.alpha() for g in self.groups])

    @property
    def phi(self) -> np.ndarray:
        return np.array([g.phi for g in self.groups])

    @property
    def theta_bar(self) -> float:
        return float(self.eta @ self.theta)

    @property
    def labels(self) -> list[str]:
        return [g.label for g in self.groups]

    def group_index(self, label: str) -> int:
        for k, g in enumerate(self.groups):
            if g.label == label:
                return k
        raise CalibrationError(f"country {self.code}: no group {label!r}")

    def validate(self) -> None:
        where = f"country {self.code}: "
        if not self.groups:
            raise CalibrationError(f"{where}no worker groups")
        labels = [g.label for g in self.groups]
        if len(set(labels)) != len(labels):
            raise CalibrationError(f"{where}duplicate group labels {labels}")
        for g in self.groups:
            g.validate(where)
        total = float(self.eta.sum())
        if abs(total - 1.0) > SHARE_TOL:
            raise CalibrationError(f"{where}population shares sum to {total:.12g}, expected 1")
        if set(self.sectors) != set(SECTORS):
            raise CalibrationError(f"{where}sectors must be exactly {SECTORS}")
        for s in self.sectors.values():
            s.validate(where)
        if self.sectors["services"].labor_share <= self.sectors["goods"].labor_share:
            raise CalibrationError(
                f"{where}services labor share {self.sectors['services'].labor_share} "
                f"must exceed goods labor share {self.sectors['goods'].labor_share}"
            )
        wsum = sum(s.gdp_weight for s in self.sectors.values())
        if abs(wsum - 1.0) > SHARE_TOL:
            raise CalibrationError(f"{where}sector gdp weights sum to {wsum:.12g}, expected 1")
        if self.trade_shares:
            tsum = sum(self.trade_shares.values())
            if abs(tsum - 1.0) > SHARE_TOL:
                raise CalibrationError(f"{where}trade shares sum to {tsum:.12g}, expected 1")
            if min(self.trade_shares.values()) < 0.0:
                raise CalibrationError(f"{where}negative trade share")


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------


def reset_prob_from_duration(duration_quarters: float) -> float:
    """Quarterly reset probability implied by an average contract length.

    Parameters
    ----------
    duration_quarters : float
        Average contract duration in quarters.

    Returns
    -------
    float
        ``1 / duration_quarters`` clamped to at most 0.999.

    Examples
    --------
    >>> round(reset_prob_from_duration(8.4), 3)
    0.119
    """
    d = float(duration_quarters)
    if not math.isfinite(d) or d <= 0.0:
        raise CalibrationError(f"duration must be positive, got {duration_quarters}")
    return min(1.0 / d, 0.999)


def sector_centrality(io: Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    """Eigenvector centrality of the domestic input-output matrix.

    ``io[j][k]`` is the share of sector ``k`` in sector ``j``'s intermediate
    bundle. The centrality vector is the dominant left eigenvector of the
    2x2 domestic block, which counts how much each sector is used by the
    other sectors, normalised to sum to one.
    """
    m = np.array([[io[j].get(k, 0.0) for k in SECTORS] for j in SECTORS])
    a, b = m[0]
    c, d = m[1]
    # left eigenvector v with v @ m = lam v
    tr, det = a + d, a * d - b * c
    lam = 0.5 * (tr + math.sqrt(max(tr * tr - 4.0 * det, 0.0)))
    if abs(c) > 1e-15:
        v = np.array([c, lam - a])
    elif abs(b) > 1e-15:
        v = np.array([lam - d, b])
    else:
        v = np.array([1.0, 1.0]) if abs(a - d) < 1e-15 else np.array([float(a > d), float(d > a)])
    v = np.abs(v)
    v = v / v.sum()
    return {s: float(x) for s, x in zip(SECTORS, v)}


def with_centrality(sectors: Mapping[str, SectorParams]) -> dict[str, SectorParams]:
    cent = sector_centrality({k: s.io_weights for k, s in sectors.items()})
    return {k: replace(s, centrality=cent[k]) for k, s in sectors.items()}


def union_weights(countries: Sequence[CountryCalibration]) -> np.ndarray:
    """GDP weights normalised to sum to one over the union."""
    w = np.array([c.gdp_weight for c in countries], dtype=float)
    if np.any(w <= 0.0):
        raise CalibrationError("country gdp weights must be positive")
    return w / w.sum()


def interpolate_quintiles(rows: list[dict]) -> list[dict]:
    """Fill in Q2 and Q4 as midpoints of Q1/Q3 and Q3/Q5.

    Only applies when the labels are exactly ``Q1, Q3, Q5``. Population
    shares are renormalised to sum to one afterwards; expenditure shares are
    averages of vectors that already sum to one.
    """
    labels = [r["label"] for r in rows]
    if sorted(labels) != ["Q1", "Q3", "Q5"]:
        return rows
    by = {r["label"]: r for r in rows}

    def mid(a: dict, b: dict, label: str, sector: str) -> dict:
        out = {"label": label, "sector": sector}
        for key in ("eta", "theta", "alpha_e", "alpha_d", "alpha_s", "phi"):
            out[key] = 0.5 * (a[key] + b[key])
        if a.get("mpc") is not None and b.get("mpc") is not None:
            out["mpc"] = 0.5 * (a["mpc"] + b["mpc"])
        return out

    full = [
        by["Q1"],
        mid(by["Q1"], by["Q3"], "Q2", "services"),
        by["Q3"],
        mid(by["Q3"], by["Q5"], "Q4", "goods"),
        by["Q5"],
    ]
    total = sum(r["eta"] for r in full)
    for r in full:
        r["eta"] = r["eta"] / total
    return full


# ---------------------------------------------------------------------------
# CSV / JSON io
# ---------------------------------------------------------------------------


def _read_csv(path: Path, required: Iterable[str]) -> list[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"missing calibration file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise CalibrationError(f"{path}: missing columns {missing}")
        return [dict(r) for r in reader]


def _num(row: dict, key: str, path: Path, line: int) -> float:
    try:
        value = float(row[key])
    except (TypeError, ValueError):
        raise CalibrationError(f"{path} row {line}: column {key}={row.get(key)!r} is not a number")
    if not math.isfinite(value):
        raise CalibrationError(f"{path} row {line}: column {key} is not finite")
    return value


def _load_groups(path: Path, phi_default: float) -> tuple[WorkerGroup, ...]:
    raw = _read_csv(path, GROUP_COLUMNS[:-2])
    rows = []
    for i, r in enumerate(raw, start=2):
        row = {"label": r["label"].strip(), "sector": (r.get("sector") or "").strip()}
        for key in ("eta", "theta", "alpha_e", "alpha_d", "alpha_s"):
            row[key] = _num(r, key, path, i)
        row["phi"] = _num(r, "phi", path, i) if r.get("phi") not in (None, "") else phi_default
        row["mpc"] = _num(r, "mpc", path, i) if r.get("mpc") not in (None, "") else None
        if not row["sector"]:
            raise CalibrationError(f"{path} row {i}: group {row['label']!r} has no sector")
        rows.append(row)
    # share sums are checked on the raw rows so the error names the file row
    for i, row in enumerate(rows, start=2):
        total = row["alpha_e"] + row["alpha_d"] + row["alpha_s"]
        if abs(total - 1.0) > SHARE_TOL:
            raise CalibrationError(
                f"{path} row {i}: group {row['label']!r} expenditure shares sum to "
                f"{total:.12g}, expected 1"
            )
    rows = interpolate_quintiles(rows)
    return tuple(WorkerGroup(**row) for row in rows)


def _load_sectors(path: Path) -> dict[str, SectorParams]:
    raw = _read_csv(path, SECTOR_COLUMNS)
    out = {}
    for i, r in enumerate(raw, start=2):
        name = r["sector"].strip()
        if name not in SECTORS:
            raise CalibrationError(f"{path} row {i}: unknown sector {name!r}")
        io = {
            "services": _num(r, "xi_services", path, i),
            "goods": _num(r, "xi_goods", path, i),
            "essentials": _num(r, "xi_essentials", path, i),
        }
        out[name] = SectorParams(
            name=name,
            labor_share=_num(r, "labor_share", path, i),
            calvo_reset=_num(r, "calvo_reset", path, i),
            io_weights=io,
            gdp_weight=_num(r, "gdp_weight", path, i),
        )
    missing = [s for s in SECTORS if s not in out]
    if missing:
        raise CalibrationError(f"{path}: missing sectors {missing}")
    return with_centrality(out)


def _load_trade(path: Path) -> dict[str, float]:
    if not path.is_file():
        return {}
    raw = _read_csv(path, ["partner", "share"])
    return {r["partner"].strip(): _num(r, "share", path, i) for i, r in enumerate(raw, start=2)}


def load_common(path: Path) -> CommonParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing calibration file: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"{path}: invalid JSON ({exc})") from None
    return CommonParams.from_dict(data)


def load_country(directory: Path, code: str, gdp_weight: float, common: CommonParams) -> CountryCalibration:
    directory = Path(directory)
    country = CountryCalibration(
        code=code,
        gdp_weight=gdp_weight,
        groups=_load_groups(directory / "groups.csv", common.phi_bar),
        sectors=_load_sectors(directory / "sectors.csv"),
        trade_shares=_load_trade(directory / "trade.csv"),
    )
    country.validate()
    return country


def load_union(directory: str | Path) -> tuple[list[CountryCalibration], CommonParams]:
    """Load and validate every country in a union directory.

    Returns
    -------
    countries : list of CountryCalibration
        In the order listed in ``countries.csv``. ``gdp_weight`` keeps the
        raw value from the file; use :func:`union_weights` for weights that
        sum to one.
    common : CommonParams
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"calibration directory not found: {directory}")
    common = load_common(directory / "common.json")
    listing = directory / "countries.csv"
    if listing.is_file():
        raw = _read_csv(listing, ["code", "gdp_weight"])
        entries = [(r["code"].strip(), _num(r, "gdp_weight", listing, i)) for i, r in enumerate(raw, start=2)]
    else:
        subdirs = sorted(p.name for p in directory.iterdir() if (p / "groups.csv").is_file())
        entries = [(code, 1.0 / max(len(subdirs), 1)) for code in subdirs]
    if not entries:
        raise CalibrationError(f"{directory}: no countries found")
    countries = [load_country(directory / code, code, w, common) for code, w in entries]
    codes = {c.code for c in countries}
    for c in countries:
        stray = [p for p in c.trade_shares if p not in codes and p != "ROW"]
        if stray:
            raise CalibrationError(f"country {c.code}: trade partners {stray} not in union")
    union_weights(countries)
    return countries, common


def save_country(country: CountryCalibration, directory: str | Path) -> None:
    """Write a country in the same CSV layout :func:`load_country` reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with_mpc = any(g.mpc is not None for g in country.groups)
    cols = GROUP_COLUMNS + (["mpc"] if with_mpc else [])
    with (directory / "groups.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for g in country.groups:
            row = [g.label, repr(g.eta), repr(g.theta), repr(g.alpha_e), repr(g.alpha_d),
                   repr(g.alpha_s), g.sector, repr(g.phi)]
            if with_mpc:
                row.append("" if g.mpc is None else repr(g.mpc))
            w.writerow(row)
    with (directory / "sectors.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SECTOR_COLUMNS)
        for name in SECTORS:
            s = country.sectors[name]
            w.writerow([name, repr(s.labor_share), repr(s.calvo_reset),
                        repr(s.io_weights["services"]), repr(s.io_weights["goods"]),
                        repr(s.io_weights["essentials"]), repr(s.gdp_weight)])
    with (directory / "trade.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["partner", "share"])
        for partner, share in country.trade_shares.items():
            w.writerow([partner, repr(share)])


def save_union(countries: Sequence[CountryCalibration], common: CommonParams, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "common.json").open("w", encoding="utf-8") as fh:
        json.dump(asdict(common), fh, indent=2)
    with (directory / "countries.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["code", "gdp_weight"])
        for c in countries:
            w.writerow([c.code, repr(c.gdp_weight)])
    for c in countries:
        save_country(c, directory / c.code)


def bundled_path(name: str) -> Path:
    """Path of a data set shipped with the package (``euroarea6``, ``figure4`` ...)."""
    path = Path(__file__).resolve().parent / "data" / name
    if not path.exists():
        raise FileNotFoundError(f"no bundled data set {name!r}")
    return path


# ---------------------------------------------------------------------------
# calibration transforms
# ---------------------------------------------------------------------------


def pooled_country(country: CountryCalibration, beta: float) -> CountryCalibration:
    """Single-group benchmark economy built from a heterogeneous country.

    The pooled worker has population-weighted shares and reset probability,
    no expectation amplification, and the aggregate wage-curve slope of the
    original economy, so both economies share the same aggregate wage
    Phillips curve whenever every group experiences the same inflation.
    """
    eta = country.eta
    alpha = eta @ country.alpha
    kappa_tilde = float(sum(g.eta * wage_slope(g, beta) for g in country.groups))
    mpc = None
    if all(g.mpc is not None for g in country.groups):
        mpc = float(sum(g.eta * g.mpc for g in country.groups))
    pooled = WorkerGroup(
        label="pooled",
        eta=1.0,
        theta=float(eta @ country.theta),
        alpha_e=float(alpha[0]),
        alpha_d=float(alpha[1]),
        alpha_s=float(1.0 - alpha[0] - alpha[1]),
        sector=country.groups[0].sector,
        phi=0.0,
        mpc=mpc,
        kappa=kappa_tilde,
    )
    return replace(country, groups=(pooled,))


def wage_slope(group: WorkerGroup, beta: float) -> float:
    """Wage Phillips-curve slope theta(1 - beta*Theta)/Theta, Theta = 1 - theta."""
    if group.kappa is not None:
        return float(group.kappa)
    stay = 1.0 - group.theta
    return group.theta * (1.0 - beta * stay) / stay


def regroup(country: CountryCalibration, n_groups: int) -> CountryCalibration:
    """Re-bin a quintile calibration into ``n_groups`` equal-population groups.

    Shares and reset probabilities are population-weighted averages within
    each bin; used for the sensitivity runs over the number of types.
    """
    G = len(country.groups)
    if n_groups == G:
        return country
    if G % n_groups and n_groups not in (2, 3):
        raise CalibrationError(f"cannot regroup {G} groups into {n_groups}")
    edges = np.linspace(0.0, 1.0, n_groups + 1)
    cum = np.concatenate([[0.0], np.cumsum(country.eta)])
    new = []
    for k in range(n_groups):
        lo, hi = edges[k], edges[k + 1]
        wts = np.clip(np.minimum(cum[1:], hi) - np.maximum(cum[:-1], lo), 0.0, None)
        share = wts.sum()
        wts = wts / share
        alpha = wts @ country.alpha
        dominant = country.groups[int(np.argmax(wts))]
        new.append(
            WorkerGroup(
                label=f"B{k + 1}",
                eta=float(share),
                theta=float(wts @ country.theta),
                alpha_e=float(alpha[0]),
                alpha_d=float(alpha[1]),
                alpha_s=float(1.0 - alpha[0] - alpha[1]),
                sector=dominant.sector,
                phi=float(wts @ country.phi),
                mpc=None,
            )
        )
    total = sum(g.eta for g in new)
    new = [replace(g, eta=g.eta / total) for g in new]
    out = replace(country, groups=tuple(new))
    out.validate()
    return out


# ---------------------------------------------------------------------------
# shocks and policy
# ---------------------------------------------------------------------------


def ar1_path(peak: float, persistence: float, T: int, peak_quarter: int = 0) -> np.ndarray:
    """Shock path that peaks at ``peak`` in quarter ``peak_quarter``.

    With ``peak_quarter == 0`` this is ``peak * persistence**t``. Otherwise
    it is a hump ``A (rho**t - r**t)`` that decays at ``rho = persistence``;
    the rise rate ``r < rho`` is chosen so that the continuous-time maximum
    falls on ``peak_quarter`` and ``A`` so that the largest quarterly value
    equals ``peak``.
    """
    if not (0.0 <= persistence < 1.0):
        raise CalibrationError(f"persistence {persistence} outside [0, 1)")
    if T < 1 or peak_quarter < 0:
        raise CalibrationError("T must be positive and peak_quarter non-negative")
    t = np.arange(T, dtype=float)
    if peak_quarter == 0 or peak == 0.0:
        return peak * persistence**t
    if persistence == 0.0:
        raise CalibrationError("a delayed peak needs positive persistence")
    rho = persistence
    lr = math.log(rho)
    if peak_quarter >= -1.0 / lr:
        raise CalibrationError(
            f"persistence {persistence} cannot peak in quarter {peak_quarter}; the latest reachable peak is "
            f"{-1.0 / lr:.2f}"
        )

    def argmax(r: float) -> float:
        return math.log(math.log(r) / lr) / (lr - math.log(r))

    rise = brentq(lambda r: argmax(r) - peak_quarter, 1e-9, rho * (1.0 - 1e-12))
    shape = rho**t - rise**t
    return peak * shape / shape.max()


@dataclass(frozen=True)
class Transfer:
    """Fiscal transfer setting.

    ``kind`` is ``none``, ``uniform`` or ``targeted``; ``amount`` is the
    share of the average essentials cost increase that the per-capita
    budget compensates each quarter (see
    :func:`hankwedge.blocks.fiscal_apply`); ``group`` names the recipient
    of a targeted transfer.
    """

    kind: str = "none"
    amount: float = 0.0
    group: str | None = None

    def validate(self) -> None:
        if self.kind not in ("none", "uniform", "targeted"):
            raise CalibrationError(f"unknown transfer kind {self.kind!r}")
        if self.kind == "targeted" and not self.group:
            raise CalibrationError("targeted transfer needs a group")
        if self.amount < 0.0:
            raise CalibrationError("transfer amount must be >= 0")


@dataclass(frozen=True)
class PolicyRegime:
    """Monetary and fiscal settings of a scenario.

    ``taylor_pi_path`` holds one inflation coefficient per quarter, which is
    how a delayed response is expressed.
    """

    taylor_pi_path: np.ndarray
    taylor_y: float
    transfer: Transfer = Transfer()
    subsidy: float = 0.0
    exogenous_rate: bool = False

    @classmethod
    def constant(cls, taylor_pi: float, taylor_y: float, T: int, delay: int = 0,
                 pi_during_delay: float = 0.0, transfer: Transfer | None = None,
                 subsidy: float = 0.0) -> "PolicyRegime":
        path = np.full(T, float(taylor_pi))
        path[: max(int(delay), 0)] = pi_during_delay
        return cls(taylor_pi_path=path, taylor_y=float(taylor_y),
                   transfer=transfer or Transfer(), subsidy=float(subsidy))

    def validate(self, T: int | None = None) -> None:
        if T is not None and len(self.taylor_pi_path) != T:
            raise CalibrationError(f"taylor_pi_path has length {len(self.taylor_pi_path)}, expected {T}")
        if np.any(np.asarray(self.taylor_pi_path) < 0.0):
            raise CalibrationError("taylor_pi_path entries must be >= 0")
        if not (0.0 <= self.subsidy < 1.0):
            raise CalibrationError(f"subsidy {self.subsidy} outside [0, 1)")
        self.transfer.validate()


@dataclass(frozen=True)
class Indexation:
    """Wage indexation for workers who do not reset: ``none``, ``cpi`` or ``type_specific``."""

    mode: str = "none"
    gamma: float = 0.0

    def validate(self) -> None:
        if self.mode not in ("none", "cpi", "type_specific"):
            raise CalibrationError(f"unknown indexation mode {self.mode!r}")
        if not (0.0 <= self.gamma <= 1.0):
            raise CalibrationError(f"indexation gamma {self.gamma} outside [0, 1]")

    @property
    def cpi_gamma(self) -> float:
        return self.gamma if self.mode == "cpi" else 0.0

    @property
    def type_gamma(self) -> float:
        return self.gamma if self.mode == "type_specific" else 0.0


@dataclass(frozen=True)
class ShockScenario:
    """Exogenous paths and policy settings for one model run.

    ``essentials_path`` is the quarterly log change of the essentials price
    (shock specifications give the peak as an annualized rate).
    ``goods_path`` and ``services_path`` are optional cost-push paths that
    raise the consumer prices of domestic items; they default to zero.
    """

    essentials_path: np.ndarray
    policy: PolicyRegime
    indexation: Indexation = Indexation()
    nonlinear: bool = False
    goods_path: np.ndarray | None = None
    services_path: np.ndarray | None = None

    @property
    def T(self) -> int:
        return len(self.essentials_path)

    def item_paths(self) -> np.ndarray:
        """(3, T) array of exogenous item price changes in order e, d, s."""
        T = self.T
        d = np.zeros(T) if self.goods_path is None else np.asarray(self.goods_path, float)
        s = np.zeros(T) if self.services_path is None else np.asarray(self.services_path, float)
        return np.vstack([np.asarray(self.essentials_path, float), d, s])

    def validate(self) -> None:
        paths = self.item_paths()
        if not np.all(np.isfinite(paths)):
            raise CalibrationError("shock paths must be finite")
        tail = np.abs(paths[:, -1]).max()
        if tail >= 1e-6:
            raise CalibrationError(
                f"shock paths have not decayed by the horizon (|u_T|={tail:.3g}); increase horizon_T"
            )
        self.policy.validate(self.T)
        self.indexation.validate()

    def scaled(self, k: float) -> "ShockScenario":
        return replace(
            self,
            essentials_path=k * np.asarray(self.essentials_path),
            goods_path=None if self.goods_path is None else k * np.asarray(self.goods_path),
            services_path=None if self.services_path is None else k * np.asarray(self.services_path),
        )


def shock_from_spec(spec: Mapping[str, object], T: int) -> np.ndarray:
    kind = spec.get("kind", "ar1")
    if kind != "ar1":
        raise CalibrationError(f"unknown shock kind {kind!r}")
    return ar1_path(float(spec["peak"]) / QUARTERS_PER_YEAR, float(spec.get("persistence", 0.88)), T,
                    int(spec.get("peak_quarter", 0)))


def scenario_from_dict(data: Mapping[str, object], common: CommonParams) -> ShockScenario:
    """Build a scenario from the JSON layout documented in the README."""
    T = int(data.get("horizon_T", common.horizon_T))
    if "essentials_path" in data:
        u = np.asarray(data["essentials_path"], dtype=float)
        if len(u) < T:
            u = np.concatenate([u, np.zeros(T - len(u))])
        u = u[:T]
    elif "shock" in data:
        u = shock_from_spec(data["shock"], T)
    else:
        raise CalibrationError("scenario needs 'essentials_path' or 'shock'")
    pol = dict(data.get("policy", {}))
    tr = pol.get("transfer", {}) or {}
    transfer = Transfer(kind=tr.get("kind", "none"), amount=float(tr.get("amount", 0.0)),
                        group=tr.get("group"))
    if "taylor_pi_path" in pol:
        path = np.asarray(pol["taylor_pi_path"], dtype=float)
        policy = PolicyRegime(path, float(pol.get("taylor_y", common.taylor_y)), transfer,
                              float(pol.get("subsidy", 0.0)))
    else:
        policy = PolicyRegime.constant(
            float(pol.get("taylor_pi", common.taylor_pi)),
            float(pol.get("taylor_y", common.taylor_y)),
            T,
            delay=int(pol.get("delay_quarters", 0)),
            pi_during_delay=float(pol.get("pi_during_delay", 0.0)),
            transfer=transfer,
            subsidy=float(pol.get("subsidy", 0.0)),
        )
    ix = data.get("indexation", {}) or {}
    if isinstance(ix, str):
        ix = {"mode": ix, "gamma": 1.0 if ix != "none" else 0.0}
    indexation = Indexation(mode=ix.get("mode", "none"), gamma=float(ix.get("gamma", 0.0)))
    extra = {}
    for key in ("goods_path", "services_path"):
        if key in data:
            extra[key] = np.resize(np.asarray(data[key], dtype=float), T)
    scenario = ShockScenario(u, policy, indexation, bool(data.get("nonlinear", False)), **extra)
    scenario.validate()
    return scenario


def load_scenario(path: str | Path, common: CommonParams) -> ShockScenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CalibrationError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(data, common)


def baseline_scenario(common: CommonParams, peak: float = 0.12, **policy) -> ShockScenario:
    """Euro-area baseline: essentials inflation hump peaking in quarter 4.

    ``peak`` is an annualized rate; the path holds quarterly log changes.
    """
    T = common.horizon_T
    u = ar1_path(peak / QUARTERS_PER_YEAR, 0.88, T, peak_quarter=4)
    regime = PolicyRegime.constant(policy.pop("taylor_pi", common.taylor_pi),
                                   policy.pop("taylor_y", common.taylor_y), T, **policy)
    return ShockScenario(u, regime)
