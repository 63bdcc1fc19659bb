"""Regenerate the calibration files shipped under ``src/hankwedge/data``.

The published tables only give essentials shares and reset probabilities
for quintiles 1, 3 and 5; the loader fills in quintiles 2 and 4. The
remaining expenditure is split between domestic goods and services in the
proportions of the sectors' GDP weights.

Run from the repository root::

    python scripts/build_bundled_data.py
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

from hankwedge.calibration import CommonParams

DATA = Path(__file__).resolve().parents[1] / "src" / "hankwedge" / "data"

SERVICES_GDP = 0.65
GOODS_GDP = 0.35
GOODS_LABOR_SHARE = 0.40
SECTOR_RESET = 0.25
IO = {
    "services": {"xi_services": 0.5, "xi_goods": 0.3, "xi_essentials": 0.2},
    "goods": {"xi_services": 0.3, "xi_goods": 0.4, "xi_essentials": 0.3},
}

EURO = {
    #       alpha_e Q1,Q3,Q5     theta Q1,Q3,Q5       services labor share, gdp weight
    "DE": ((0.40, 0.28, 0.17), (0.28, 0.16, 0.07), 0.63, 0.29),
    "FR": ((0.38, 0.27, 0.16), (0.24, 0.14, 0.06), 0.60, 0.20),
    "IT": ((0.42, 0.30, 0.18), (0.20, 0.11, 0.05), 0.62, 0.15),
    "ES": ((0.43, 0.30, 0.16), (0.32, 0.18, 0.07), 0.65, 0.10),
    "NL": ((0.37, 0.26, 0.15), (0.30, 0.17, 0.07), 0.66, 0.07),
    "BE": ((0.39, 0.28, 0.17), (0.26, 0.15, 0.06), 0.61, 0.04),
}

# food + energy budget shares (percent) for Q1 and Q5, average contract years
EURO_MICRO = {
    "DE": (36.2, 19.8, 2.1),
    "FR": (34.5, 20.4, 2.5),
    "IT": (38.1, 21.7, 2.8),
    "ES": (39.8, 19.1, 1.8),
    "NL": (33.0, 18.5, 2.0),
    "BE": (35.8, 21.2, 2.3),
}

# Q1 share, Q5 share (percent), reset-frequency gap, published index, published wedge (pp)
NON_EURO = {
    "US": (32.4, 16.8, 0.20, 4.6, 0.39),
    "UK": (35.1, 18.3, 0.22, 5.4, 0.54),
    "JP": (31.8, 19.5, 0.10, 3.1, 0.10),
}


def split(alpha_e: float) -> tuple[float, float, float]:
    rest = 1.0 - alpha_e
    alpha_d = round(GOODS_GDP * rest, 6)
    alpha_s = round(1.0 - alpha_e - alpha_d, 6)
    return alpha_e, alpha_d, alpha_s


def write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_sectors(path: Path, services_labor: float) -> None:
    rows = []
    for name, labor, weight in (("services", services_labor, SERVICES_GDP), ("goods", GOODS_LABOR_SHARE, GOODS_GDP)):
        io = IO[name]
        rows.append([name, labor, SECTOR_RESET, io["xi_services"], io["xi_goods"], io["xi_essentials"], weight])
    write_rows(path, ["sector", "labor_share", "calvo_reset", "xi_services", "xi_goods", "xi_essentials", "gdp_weight"], rows)


def groups_rows(spec: list[tuple[str, float, float, float, str]], phi: float) -> list[list]:
    rows = []
    for label, eta, theta, alpha_e, sector in spec:
        e, d, s = split(alpha_e)
        rows.append([label, eta, theta, e, d, s, sector, phi])
    return rows


GROUP_HEADER = ["label", "eta", "theta", "alpha_e", "alpha_d", "alpha_s", "sector", "phi"]


def build_euro(common: CommonParams) -> None:
    root = DATA / "euroarea6"
    (root).mkdir(parents=True, exist_ok=True)
    with (root / "common.json").open("w", encoding="utf-8") as fh:
        json.dump(asdict(common), fh, indent=2)
        fh.write("\n")
    write_rows(root / "countries.csv", ["code", "gdp_weight"], [[c, v[3]] for c, v in EURO.items()])
    for code, (alpha_e, theta, labor, _) in EURO.items():
        spec = [
            ("Q1", 0.2, theta[0], alpha_e[0], "services"),
            ("Q3", 0.2, theta[1], alpha_e[1], "services"),
            ("Q5", 0.2, theta[2], alpha_e[2], "goods"),
        ]
        write_rows(root / code / "groups.csv", GROUP_HEADER, groups_rows(spec, common.phi_bar))
        write_sectors(root / code / "sectors.csv", labor)
        others = {c: v[3] for c, v in EURO.items() if c != code}
        total = sum(others.values())
        partners = list(others)
        shares = [round(others[p] / total, 6) for p in partners]
        shares[-1] = round(1.0 - sum(shares[:-1]), 6)
        write_rows(root / code / "trade.csv", ["partner", "share"], [[p, s] for p, s in zip(partners, shares)])
    write_rows(
        root / "micro.csv",
        ["country", "essentials_q1_pct", "essentials_q5_pct", "avg_contract_years"],
        [[c, *v] for c, v in EURO_MICRO.items()],
    )


def build_figure4(common: CommonParams) -> None:
    root = DATA / "figure4"
    root.mkdir(parents=True, exist_ok=True)
    with (root / "common.json").open("w", encoding="utf-8") as fh:
        json.dump({**asdict(common), "lambda_e": 1.0}, fh, indent=2)
        fh.write("\n")
    write_rows(root / "countries.csv", ["code", "gdp_weight"], [["FIG4", 1.0]])
    spec = [("H", 0.5, 0.25, 0.38, "services"), ("L", 0.5, 0.06, 0.18, "goods")]
    write_rows(root / "FIG4" / "groups.csv", GROUP_HEADER, groups_rows(spec, 0.0))
    write_sectors(root / "FIG4" / "sectors.csv", 0.63)
    write_rows(root / "FIG4" / "trade.csv", ["partner", "share"], [])


def build_same_openness(common: CommonParams) -> None:
    # steep gradient with mean essentials share 0.28 and mean reset 0.17
    root = DATA / "same_openness"
    root.mkdir(parents=True, exist_ok=True)
    with (root / "common.json").open("w", encoding="utf-8") as fh:
        json.dump(asdict(common), fh, indent=2)
        fh.write("\n")
    write_rows(root / "countries.csv", ["code", "gdp_weight"], [["A", 1.0]])
    alpha = (0.48, 0.37, 0.26, 0.19, 0.10)
    theta = (0.46, 0.18, 0.10, 0.068, 0.042)
    sectors = ("services", "services", "services", "goods", "goods")
    spec = [(f"Q{k + 1}", 0.2, theta[k], alpha[k], sectors[k]) for k in range(5)]
    write_rows(root / "A" / "groups.csv", GROUP_HEADER, groups_rows(spec, common.phi_bar))
    write_sectors(root / "A" / "sectors.csv", 0.63)
    write_rows(root / "A" / "trade.csv", ["partner", "share"], [])


def build_non_euro() -> None:
    root = DATA / "noneuro"
    root.mkdir(parents=True, exist_ok=True)
    write_rows(
        root / "portability.csv",
        ["country", "essentials_q1_pct", "essentials_q5_pct", "theta_gap", "published_index", "published_omega_pp"],
        [[c, *v] for c, v in NON_EURO.items()],
    )


def build_scenarios() -> None:
    root = DATA / "scenarios"
    root.mkdir(parents=True, exist_ok=True)
    base_shock = {"kind": "ar1", "peak": BASELINE_PEAK, "persistence": 0.88, "peak_quarter": 4}
    scenarios = {
        "baseline": {"shock": base_shock, "policy": {"taylor_pi": 1.5}, "nonlinear": True},
        "baseline_linear": {"shock": base_shock, "policy": {"taylor_pi": 1.5}, "nonlinear": False},
        "delay": {
            "shock": {**base_shock, "peak": round(BASELINE_PEAK * 40.0 / 25.0, 6)},
            "policy": {"taylor_pi": 2.0, "delay_quarters": 5, "pi_during_delay": 0.0},
            "nonlinear": True,
        },
        "cpi_indexation": {"shock": base_shock, "indexation": {"mode": "cpi", "gamma": 1.0}, "nonlinear": True},
    }
    for name, data in scenarios.items():
        with (root / f"{name}.json").open("w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2)
            fh.write("\n")


BASELINE_PEAK = 0.12


def main() -> None:
    common = CommonParams()
    build_euro(common)
    build_figure4(common)
    build_same_openness(common)
    build_non_euro()
    build_scenarios()
    print(f"wrote bundled data under {DATA}")


if __name__ == "__main__":
    main()
