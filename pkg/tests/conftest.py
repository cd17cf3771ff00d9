import numpy as np
import pytest

from u2flow import flow
from u2flow.grids import MetricState, RadialGrid, build_grid
from u2flow.reference import EHProfile, integrate_eh


@pytest.fixture(scope="session")
def eh_profile() -> EHProfile:
    return integrate_eh(60.0, 1e-3)


@pytest.fixture(scope="session")
def grid_600() -> RadialGrid:
    return build_grid(12.0, 600)


@pytest.fixture()
def cylinder_state(grid_600) -> MetricState:
    n = grid_600.n_nodes
    return MetricState(grid_600, u=np.ones(n), a=np.ones(n), b=np.ones(n),
                       k=2, geometry="segment")


@pytest.fixture()
def flat_state(grid_600) -> MetricState:
    xi = grid_600.nodes
    return MetricState(grid_600, u=np.ones(xi.size), a=xi + 1.0, b=xi + 1.0,
                       k=1, geometry="segment")


@pytest.fixture()
def eh_state(eh_profile, grid_600) -> MetricState:
    from u2flow.reference import eh_as_metric_state

    return eh_as_metric_state(eh_profile, grid_600)


@pytest.fixture()
def tanh_state() -> MetricState:
    grid = build_grid(20.0, 800)
    return flow.make_initial_data("tanh_cap", 2, grid)


def make_class_i_state(rng: np.random.Generator, n: int = 800, xi_max: float = 10.0,
                       k: int | None = None) -> MetricState:
    """Random admissible bundle state with the exact tip slope.

    a = b tanh(k s / b0) with s = u0 xi keeps Q <= 1 and a_s(0) = k; a gentle
    rise in b keeps b_s >= 0 small enough that y <= 0 holds.
    """
    k = int(rng.integers(1, 4)) if k is None else k
    grid = build_grid(xi_max, n)
    xi = grid.nodes
    u0 = rng.uniform(0.9, 1.1)
    b0 = rng.uniform(0.7, 1.5)
    rise = rng.uniform(0.0, 0.1)
    b = b0 * (1.0 + rise * np.tanh(0.3 * u0 * xi) ** 2)
    a = b * np.tanh(k * u0 * xi / b0)
    st = MetricState(grid, u=np.full(xi.size, u0), a=a, b=b, k=k)
    st.validate()
    return st
