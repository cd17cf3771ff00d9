import numpy as np
import pytest

from u2flow.grids import (DiffOps, GradingSpec, GridError, MetricState, RadialGrid,
                          build_grid, fd_weights, snapshot_from_csv, snapshot_meta,
                          snapshot_to_csv)


def test_uniform_grid_nodes():
    grid = build_grid(10.0, 100, "uniform")
    assert grid.n_nodes == 101
    np.testing.assert_allclose(grid.nodes, np.linspace(0, 10, 101))


def test_geometric_grading_ratio():
    grid = build_grid(10.0, 100, GradingSpec("geometric", 1.05))
    h = grid.spacings
    np.testing.assert_allclose(h[1:] / h[:-1], 1.05, rtol=1e-12)
    assert grid.nodes[-1] == pytest.approx(10.0)


def test_small_grid_rejected():
    with pytest.raises(GridError):
        build_grid(10.0, 8, "uniform")


def test_bad_ratio_rejected():
    with pytest.raises(GridError):
        build_grid(10.0, 100, GradingSpec("geometric", 2.5))
    with pytest.raises(GridError):
        RadialGrid(np.concatenate([[0.0, 1.0], 1.0 + np.cumsum(3.0 ** np.arange(20))]))


def test_nodes_must_increase():
    with pytest.raises(GridError):
        RadialGrid(np.array([0.0] + [1.0] * 20))


def test_fd_weights_exact_on_polynomials():
    x = np.array([-0.3, -0.1, 0.0, 0.2, 0.45])
    c = fd_weights(x, 0.05, 2)
    for p in range(5):
        vals = x**p
        d0 = sum(c[:, 0] * vals)
        d1 = sum(c[:, 1] * vals)
        d2 = sum(c[:, 2] * vals)
        assert d0 == pytest.approx(0.05**p, abs=1e-12)
        assert d1 == pytest.approx(p * 0.05 ** max(p - 1, 0) if p else 0.0, abs=1e-12)
        expect2 = p * (p - 1) * 0.05 ** max(p - 2, 0) if p >= 2 else 0.0
        assert d2 == pytest.approx(expect2, abs=1e-11)


@pytest.mark.parametrize("acc", [2, 4, 6])
def test_derivative_convergence(acc):
    errs = []
    for n in (100, 200):
        grid = build_grid(3.0, n)
        f = np.sin(grid.nodes)
        ops = DiffOps(grid)
        if acc == 2:
            d = ops.d_xi(f, parity="odd", order=1)
        else:
            d = ops.d_xi_n(f, parity="odd", order=1, acc=acc)
        errs.append(np.max(np.abs(d - np.cos(grid.nodes))[: n // 2]))
    order = np.log2(errs[0] / errs[1])
    assert order > acc - 0.5


def test_parity_ghosts_exact():
    grid = build_grid(5.0, 64)
    ops = DiffOps(grid)
    even = np.cos(grid.nodes)
    odd = np.sin(grid.nodes)
    assert ops.d_xi(even, parity="even", order=1)[0] == 0.0
    assert ops.d_xi_n(even, parity="even", order=1, acc=6)[0] == 0.0
    assert ops.d_xi(odd, parity="odd", order=2)[0] == pytest.approx(0.0, abs=1e-12)


def test_metric_state_invariants(tanh_state):
    tanh_state.validate()
    assert tanh_state.tip_slope_a() == pytest.approx(2.0, rel=1e-4)
    bad = tanh_state.with_fields(b=np.zeros_like(tanh_state.b))
    with pytest.raises(ValueError):
        bad.validate()


def test_tip_slope_matches_k():
    for k in (1, 2, 3):
        grid = build_grid(10.0, 400)
        st = MetricState(grid, u=np.ones(401), a=np.tanh(k * grid.nodes),
                         b=np.ones(401), k=k)
        st.validate(tip_tol=0.01)


def test_snapshot_roundtrip_bit_exact(tanh_state):
    rng = np.random.default_rng(7)
    st = tanh_state.with_fields(
        u=tanh_state.u * np.exp(rng.normal(0, 1e-3, tanh_state.u.size)))
    csv = snapshot_to_csv(st)
    meta = snapshot_meta(st)
    back = snapshot_from_csv(csv, meta)
    assert np.array_equal(back.u, st.u)
    assert np.array_equal(back.a, st.a)
    assert np.array_equal(back.b, st.b)
    assert np.array_equal(back.grid.nodes, st.grid.nodes)
    assert back.k == st.k and back.t == st.t and back.geometry == st.geometry


def test_scaled_state():
    grid = build_grid(4.0, 64)
    st = MetricState(grid, u=np.ones(65), a=np.tanh(2 * grid.nodes), b=np.ones(65), k=2)
    st2 = st.scaled(3.0)
    assert st2.grid.xi_max == pytest.approx(12.0)
    np.testing.assert_allclose(st2.a, 3.0 * st.a)
