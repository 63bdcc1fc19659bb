import numpy as np
import pytest
from hypothesis import strategies as st

from hankwedge.calibration import (CountryCalibration, SectorParams, WorkerGroup, bundled_path, load_union,
                                   with_centrality)


def make_sectors(labor=(0.63, 0.45), reset=(0.25, 0.35)):
    io = {"services": 0.5, "goods": 0.3, "essentials": 0.2}
    sectors = {
        "services": SectorParams("services", labor[0], reset[0], dict(io), 0.6),
        "goods": SectorParams("goods", labor[1], reset[1], dict(io), 0.4),
    }
    return with_centrality(sectors)


def two_type(theta_h, theta_l, alpha_h, alpha_l, eta_h=0.5, phi=0.0, code="X"):
    """Two-group country; ``alpha_*`` are (e, d, s) share triples."""
    groups = (
        WorkerGroup("H", eta_h, theta_h, *alpha_h, "services", phi),
        WorkerGroup("L", 1.0 - eta_h, theta_l, *alpha_l, "goods", phi),
    )
    return CountryCalibration(code, 1.0, groups, make_sectors())


@st.composite
def baskets(draw):
    e = draw(st.floats(0.02, 0.6))
    d = draw(st.floats(0.0, 1.0)) * (1.0 - e)
    return (e, d, 1.0 - e - d)


@st.composite
def two_type_countries(draw):
    return two_type(
        draw(st.floats(0.02, 0.95)),
        draw(st.floats(0.02, 0.95)),
        draw(baskets()),
        draw(baskets()),
        eta_h=draw(st.floats(0.05, 0.95)),
    )


@st.composite
def price_changes(draw):
    return np.array([draw(st.floats(-0.5, 0.5)) for _ in range(3)])


@pytest.fixture(scope="session")
def figure4():
    countries, common = load_union(bundled_path("figure4"))
    return countries[0], common


@pytest.fixture(scope="session")
def euro():
    return load_union(bundled_path("euroarea6"))


@pytest.fixture(scope="session")
def euro_hh(euro):
    from hankwedge.household import household_jacobians

    _, common = euro
    return household_jacobians(common, common.horizon_T)
