"""Time integration of the reduced flow in fixed (xi, t) coordinates.

The three warping functions evolve by

    du/dt = u (a_ss/a + 2 b_ss/b)
    da/dt = a_ss - 2 a^3/b^4 + 2 a_s b_s / b
    db/dt = b_ss - 4/b + 2 a^2/b^3 + a_s b_s / a + b_s^2 / b

where _s = (1/u) d/dxi. The grid in xi never moves; the lapse u carries all
mesh motion, so resolution in arclength follows the developing region
automatically. At the tip the degenerate terms are replaced by their parity
limits: da/dt = 0, db/dt = 2 b_ss - 4/b, and a_ss/a extends evenly.

Stepping is explicit (midpoint Runge-Kutta) under a parabolic stability bound
dt <= safety * min(u dxi)^2 / 4, additionally capped near a shrinking tip by
a fixed fraction of b(o,t)^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry
from .geometry import EVEN, ODD, derivatives, even_tip_limit, scale_invariants
from .grids import GradingSpec, MetricState, RadialGrid, build_grid
from .reference import EHProfile, integrate_eh


class FlowError(RuntimeError):
    pass


class StepError(FlowError):
    pass


# -- configuration ------------------------------------------------------------


@dataclass
class FlowConfig:
    k: int = 2
    family: str = "tanh_cap"
    b0: float = 1.0
    scale: float = 1.0
    cap_radius: float = 5.0
    cap_width: float = 0.0  # 0 -> cap_radius / 2
    s0: float = 1.0
    file: Optional[str] = None

    xi_max: float = 20.0
    n: int = 1000
    grading: str = "uniform"

    cfl: float = 0.5
    dt_max: float = 1e-3
    tip_dt_factor: float = 0.01
    t_max: float = 1.0
    b_tip_min: float = 0.05
    riem_max: float = 1e10
    max_steps: int = 50_000_000
    stepper: str = "rkc2"  # 'rkc2' (stage count adapts) or 'rk2'

    monitor_every: int = 5
    snapshot_btip_factor: float = 0.95
    snapshot_dt: float = 0.0
    c_hpm: Optional[float] = None

    regrid: bool = True
    regrid_u_floor: float = 0.7
    regrid_u_ceil: float = 1.5
    regrid_chi: float = 80.0
    #: regrid when the tip resolution has degraded by this factor from chi
    regrid_slack: float = 1.1
    regrid_ratio_cap: float = 1.02
    regrid_check_every: int = 10

    def validate(self):
        if not (0.0 < self.cfl < 1.0):
            raise ValueError("cfl safety factor must lie in (0, 1)")
        if self.b_tip_min <= 0:
            raise ValueError("b_tip_min must be positive")
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")

    def build_grid(self) -> RadialGrid:
        return build_grid(self.xi_max, self.n, GradingSpec.parse(self.grading))


@dataclass(frozen=True)
class BoundaryData:
    """Frozen xi-slopes used as Neumann data at the ends of the grid.

    Outer end always; inner end only in segment geometry (the bundle tip is
    handled by parity). u gets zero slope at both ends.
    """

    a_outer: float
    b_outer: float
    a_inner: Optional[float] = None
    b_inner: Optional[float] = None

    @staticmethod
    def from_state(state: MetricState) -> "BoundaryData":
        ops = state.ops
        tip = None if state.geometry == "segment" else ODD
        a_xi = ops.d_xi(state.a, parity=tip)
        tip_b = None if state.geometry == "segment" else EVEN
        b_xi = ops.d_xi(state.b, parity=tip_b)
        inner_a = float(a_xi[0]) if state.geometry == "segment" else None
        inner_b = float(b_xi[0]) if state.geometry == "segment" else None
        return BoundaryData(float(a_xi[-1]), float(b_xi[-1]), inner_a, inner_b)


# -- right-hand side -----------------------------------------------------------

#: interior stencil accuracy of the flow. Second-order stencils turn out to
#: leave O((h/b)^2) drift in the conserved-inequality margins near the tip,
#: orders of magnitude above the monitoring tolerance, so the interior runs
#: at sixth order; the outer two nodes stay on the compact second-order
#: Neumann closure.
FLOW_ACC = 6

def _acc2_edge(f: np.ndarray, h_in: float, h_out: float, slope: Optional[float],
               last: bool) -> tuple[float, float]:
    """Compact 3-point (d1, d2) at an end node, with a pinned-slope ghost."""
    if last:
        fm, f0 = f[-2], f[-1]
        h = h_out
        if slope is None:
            return (f0 - fm) / h, 0.0
        ghost = f0 + h * slope
        return (ghost - fm) / (2.0 * h), (fm - 2.0 * f0 + ghost) / h**2
    fm, f0 = f[1], f[0]
    h = h_in
    if slope is None:
        return (fm - f0) / h, 0.0
    ghost = f0 - h * slope
    return (fm - ghost) / (2.0 * h), (ghost - 2.0 * f0 + fm) / h**2


def _flow_derivs_core(ops, bundle: bool, u, a, b, bc: Optional[BoundaryData]):
    """(a_s, b_s, a_ss, b_ss) at FLOW_ACC order, boundary closures applied."""
    idx, w1, w2 = ops.fd_tables(FLOW_ACC, bundle)
    g = FLOW_ACC // 2
    n = a.size
    if bundle:
        F = np.empty((3, n + g))
        F[0, :g] = u[g:0:-1]
        F[1, :g] = -a[g:0:-1]
        F[2, :g] = b[g:0:-1]
        F[:, g:] = (u, a, b)
    else:
        F = np.stack([u, a, b])
    S = F[:, idx]
    d1 = np.einsum("fjm,jm->fj", S, w1)
    d2 = np.einsum("fjm,jm->fj", S, w2)

    h = ops.grid.spacings
    h_in, h_out = float(h[0]), float(h[-1])
    xi = ops.grid.nodes

    def edge_fix(fi: int, f: np.ndarray, slope_out, slope_in):
        # outer: ghost-slope closure at N, compact interior 3-point at N-1, N-2
        d1[fi, -1], d2[fi, -1] = _acc2_edge(f, h_in, h_out, slope_out, last=True)
        for j in (n - 2, n - 3):
            hm = xi[j] - xi[j - 1]
            hp = xi[j + 1] - xi[j]
            den = hm * hp * (hm + hp)
            d1[fi, j] = (-hp**2 * f[j - 1] + (hp**2 - hm**2) * f[j] + hm**2 * f[j + 1]) / den
            d2[fi, j] = 2.0 * (hp * f[j - 1] - (hm + hp) * f[j] + hm * f[j + 1]) / den
        if not bundle:
            d1[fi, 0], d2[fi, 0] = _acc2_edge(f, h_in, h_out, slope_in, last=False)
            for j in (1, 2):
                hm = xi[j] - xi[j - 1]
                hp = xi[j + 1] - xi[j]
                den = hm * hp * (hm + hp)
                d1[fi, j] = (-hp**2 * f[j - 1] + (hp**2 - hm**2) * f[j] + hm**2 * f[j + 1]) / den
                d2[fi, j] = 2.0 * (hp * f[j - 1] - (hm + hp) * f[j] + hm * f[j + 1]) / den

    if bc is not None:
        edge_fix(0, u, 0.0, 0.0 if not bundle else None)
        edge_fix(1, a, bc.a_outer, bc.a_inner)
        edge_fix(2, b, bc.b_outer, bc.b_inner)

    u1, a1, b1 = d1
    a2, b2 = d2[1], d2[2]
    a_s = a1 / u
    b_s = b1 / u
    a_ss = a2 / u**2 - a1 * u1 / u**3
    b_ss = b2 / u**2 - b1 * u1 / u**3
    return a_s, b_s, a_ss, b_ss


#: strength of the sixth-difference damping applied to the lapse u. The
#: u-equation carries no spatial diffusion of its own, and the discrete
#: metric feedback anti-damps a grid-scale sawtooth in u near the tip; the
#: damping term is O(h^4)-small on smooth data and keeps that mode decaying.
U_DISSIPATION = 0.02

_D6_WEIGHTS = np.array([1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0])


def _u_dissipation_term(ops, bundle: bool, u: np.ndarray) -> np.ndarray:
    """sigma * (sixth undivided difference of u) / local diffusive time.

    The sixth difference of the grid-scale sawtooth is -64x the sawtooth, so
    with this sign the term damps it at a rate comparable to the physical
    diffusion of a and b at the grid scale. u is even across the tip; the
    outer three nodes are left undamped.
    """
    ue = np.concatenate([u[3:0:-1], u])  # even closure at the inner end
    n = u.size
    d6 = np.zeros(n)
    core = np.convolve(ue, _D6_WEIGHTS, mode="valid")
    d6[: core.size] = core
    tau = (u * ops.local_spacing) ** 2 / 4.0
    d6[-3:] = 0.0
    return U_DISSIPATION * d6 / tau


def rhs_arrays(ops, bundle: bool, u, a, b, bc: Optional[BoundaryData] = None,
               dissipation: bool = True):
    """Flow right-hand side on raw field arrays (hot path)."""
    a_s, b_s, a_ss, b_ss = _flow_derivs_core(ops, bundle, u, a, b, bc)
    if bundle:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = a_ss / a
            inv_a = a_s * b_s / a
        ratio[: geometry.TIP_PATCH + 1] = geometry.tip_ratio_a_arrays(ops, u, a)
        da = a_ss - 2.0 * a**3 / b**4 + 2.0 * a_s * b_s / b
        db = b_ss - 4.0 / b + 2.0 * a**2 / b**3 + inv_a + b_s**2 / b
        du = u * (ratio + 2.0 * b_ss / b)
        da[0] = 0.0
        db[0] = 2.0 * b_ss[0] - 4.0 / b[0]
    else:
        da = a_ss - 2.0 * a**3 / b**4 + 2.0 * a_s * b_s / b
        db = b_ss - 4.0 / b + 2.0 * a**2 / b**3 + a_s * b_s / a + b_s**2 / b
        du = u * (a_ss / a + 2.0 * b_ss / b)
    if dissipation and U_DISSIPATION > 0.0:
        du = du + _u_dissipation_term(ops, bundle, u)
    return du, da, db


def rhs(state: MetricState, bc: Optional[BoundaryData] = None):
    """Time derivatives (du, da, db) of the warping functions.

    Returns arrays over the grid; non-finite entries indicate numerical
    blow-up (callers should stop the run). When ``bc`` is None the boundary
    slopes are taken from the state itself (one-sided stencils).
    """
    return rhs_arrays(state.ops, state.geometry == "bundle", state.u, state.a,
                      state.b, bc)


def ds_dt(state: MetricState) -> np.ndarray:
    """Drift of the arclength coordinate: cumulative integral of du/dt / u.

    Equals int_0^s (a_ss/a + 2 b_ss/b) ds with the tip integrand extended
    evenly.
    """
    d = derivatives(state)
    integrand = d.a_ss_over_a + 2.0 * d.b_ss / state.b
    if state.geometry == "segment":
        integrand = d.a_ss / state.a + 2.0 * d.b_ss / state.b
    s = d.s
    out = np.empty_like(s)
    out[0] = 0.0
    np.cumsum(0.5 * (integrand[:-1] + integrand[1:]) * np.diff(s), out=out[1:])
    return out


# -- stepping -------------------------------------------------------------------


def stable_dt_arrays(ops, u: np.ndarray, cfl: float) -> float:
    return float(cfl * np.min((u * ops.local_spacing) ** 2) / 4.0)


def stable_dt(state: MetricState, cfl: float = 0.5) -> float:
    """Parabolic bound: dt <= cfl * min(u * local dxi)^2 / 4."""
    return stable_dt_arrays(state.ops, state.u, cfl)


# -- Runge-Kutta-Chebyshev (second order) ----------------------------------------

_RKC_DAMPING = 2.0 / 13.0
_RKC_MAX_STAGES = 128


def _rkc_coeffs(s: int):
    """Recurrence coefficients of the s-stage second-order RKC scheme."""
    w0 = 1.0 + _RKC_DAMPING / s**2
    T = np.empty(s + 1)
    dT = np.empty(s + 1)
    d2T = np.empty(s + 1)
    T[0], dT[0], d2T[0] = 1.0, 0.0, 0.0
    T[1], dT[1], d2T[1] = w0, 1.0, 0.0
    for j in range(2, s + 1):
        T[j] = 2.0 * w0 * T[j - 1] - T[j - 2]
        dT[j] = 2.0 * T[j - 1] + 2.0 * w0 * dT[j - 1] - dT[j - 2]
        d2T[j] = 4.0 * dT[j - 1] + 2.0 * w0 * d2T[j - 1] - d2T[j - 2]
    w1 = dT[s] / d2T[s]
    b = np.empty(s + 1)
    b[2:] = d2T[2:] / dT[2:] ** 2
    b[0] = b[1] = b[2]
    a_c = 1.0 - b * T
    beta = (w0 + 1.0) / w1  # real stability interval [-beta, 0]
    return w0, w1, a_c, b, beta


_RKC_CACHE: dict[int, tuple] = {}


def _rkc_coeffs_cached(s: int) -> tuple:
    coeffs = _RKC_CACHE.get(s)
    if coeffs is None:
        coeffs = _rkc_coeffs(s)
        _RKC_CACHE[s] = coeffs
    return coeffs


def rkc_stages_for(dt_want: float, dt_euler: float, s_max: int = _RKC_MAX_STAGES) -> int:
    """Smallest stage count whose stability interval covers dt_want."""
    if dt_want <= 2.0 * dt_euler:
        return 2
    s = max(2, int(np.ceil(np.sqrt(2.0 * dt_want / (0.653 * dt_euler)))))
    while s <= s_max:
        coeffs = _RKC_CACHE.get(s)
        if coeffs is None:
            coeffs = _rkc_coeffs(s)
            _RKC_CACHE[s] = coeffs
        if coeffs[4] * dt_euler / 2.0 >= dt_want:
            return s
        s += 1
    return s_max


def rkc2_step_arrays(ops, bundle: bool, u, a, b, dt: float, s: int,
                     bc: Optional[BoundaryData]):
    """One s-stage RKC2 update of the raw field arrays."""
    coeffs = _RKC_CACHE.get(s)
    if coeffs is None:
        coeffs = _rkc_coeffs(s)
        _RKC_CACHE[s] = coeffs
    w0, w1, a_c, b_c, _ = coeffs
    y0 = (u, a, b)
    f0 = rhs_arrays(ops, bundle, u, a, b, bc)
    mu1 = b_c[1] * w1
    prev2 = y0
    prev = tuple(y0[i] + dt * mu1 * f0[i] for i in range(3))
    if bundle:
        prev[1][0] = 0.0
    for j in range(2, s + 1):
        mu = 2.0 * b_c[j] * w0 / b_c[j - 1]
        nu = -b_c[j] / b_c[j - 2]
        mut = 2.0 * b_c[j] * w1 / b_c[j - 1]
        gt = -a_c[j - 1] * mut
        fj = rhs_arrays(ops, bundle, prev[0], prev[1], prev[2], bc)
        cur = tuple(
            (1.0 - mu - nu) * y0[i] + mu * prev[i] + nu * prev2[i]
            + mut * dt * fj[i] + gt * dt * f0[i]
            for i in range(3)
        )
        if bundle:
            cur[1][0] = 0.0
        prev2, prev = prev, cur
    return prev


def step(state: MetricState, dt: float, bc: Optional[BoundaryData] = None,
         cfl_check: float = 1.0) -> MetricState:
    """One explicit midpoint Runge-Kutta update of (u, a, b).

    Raises StepError when dt exceeds the stability bound or the update
    produces a nonpositive b or u (too large a step, or a singularity).
    """
    bound = stable_dt(state, cfl_check)
    if dt > bound * (1.0 + 1e-12):
        raise StepError(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")

    def advance(base: MetricState, rates, h: float, t: float) -> MetricState:
        du, da, db = rates
        u = base.u + h * du
        a = base.a + h * da
        b = base.b + h * db
        if base.geometry == "bundle":
            a = a.copy()
            a[0] = 0.0
        return MetricState(base.grid, u=u, a=a, b=b, t=t, k=base.k, geometry=base.geometry)

    k1 = rhs(state, bc)
    half = advance(state, k1, 0.5 * dt, state.t + 0.5 * dt)
    _check_positive(half)
    k2 = rhs(half, bc)
    new = advance(state, k2, dt, state.t + dt)
    _check_positive(new)
    return new


def _check_positive(state: MetricState):
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(state.a)) and np.all(np.isfinite(state.b))):
        raise StepError("non-finite field after step")
    if np.min(state.b) <= 0.0 or np.min(state.u) <= 0.0:
        raise StepError("nonpositive b or u after step (dt too large or singularity reached)")


# -- gauge refresh (regridding) -----------------------------------------------


UNIFORM_TIP_INTERVALS = 16


def _graded_nodes(total: float, n: int, h0: float, ratio_cap: float) -> tuple[np.ndarray, float]:
    """n intervals covering [0, total], first spacing ~h0, geometric growth.

    The first UNIFORM_TIP_INTERVALS intervals are kept exactly uniform so the
    near-tip stencils stay symmetric; beyond that the spacing grows
    geometrically.
    """
    if h0 >= total / n * (1.0 - 1e-12):
        return np.linspace(0.0, total, n + 1), 1.0
    m = min(UNIFORM_TIP_INTERVALS, n // 4)
    rest = total - m * h0
    n_rest = n - m

    def length(r: float) -> float:
        return h0 * r * (r**n_rest - 1.0) / (r - 1.0)

    if length(ratio_cap) < rest:
        # cannot reach the requested tip resolution within the ratio cap;
        # coarsen the tip spacing instead
        lo_h = rest * (ratio_cap - 1.0) / (ratio_cap * (ratio_cap**n_rest - 1.0))
        h0 = (total) / (m + (ratio_cap * (ratio_cap**n_rest - 1.0) / (ratio_cap - 1.0)))
        r = ratio_cap
        rest = total - m * h0
    else:
        lo, hi = 1.0 + 1e-14, ratio_cap
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if length(mid) < rest:
                lo = mid
            else:
                hi = mid
        r = 0.5 * (lo + hi)
    spacings = np.concatenate([np.full(m, h0), h0 * r ** np.arange(1, n_rest + 1)])
    nodes = np.concatenate([[0.0], np.cumsum(spacings)])
    nodes *= total / nodes[-1]
    return nodes, r


def regrid_arclength(state: MetricState, chi: float = 40.0, ratio_cap: float = 1.02,
                     n: Optional[int] = None) -> MetricState:
    """Reparametrize the radial coordinate to current arclength (u -> 1).

    Pure gauge move: the new grid samples the same geometry on nodes graded
    so the tip carries ~chi nodes per tip scale b(o). Used to undo the
    collapse of u near a developing region, which would otherwise strangle
    the explicit stability bound.
    """
    from scipy.interpolate import make_interp_spline

    s = geometry.radial_distance(state)
    total = float(s[-1])
    n = n or (state.grid.n_nodes - 1)
    if state.geometry == "bundle":
        h0 = min(total / n, float(state.b[0]) / chi)
    else:
        h0 = total / n
    nodes, r = _graded_nodes(total, n, h0, ratio_cap)
    grading = GradingSpec("uniform") if r == 1.0 else GradingSpec("geometric", float(r))

    if state.geometry == "bundle":
        # quintic interpolation on parity-mirrored data keeps the regrid
        # error below the flow's interior truncation
        m = min(8, s.size - 1)
        s_ext = np.concatenate([-s[m:0:-1], s])
        a_sp = make_interp_spline(s_ext, np.concatenate([-state.a[m:0:-1], state.a]), k=5)
        b_sp = make_interp_spline(s_ext, np.concatenate([state.b[m:0:-1], state.b]), k=5)
    else:
        a_sp = make_interp_spline(s, state.a, k=5)
        b_sp = make_interp_spline(s, state.b, k=5)
    a = a_sp(nodes)
    b = b_sp(nodes)
    if state.geometry == "bundle":
        a[0] = 0.0
    grid = RadialGrid(nodes, grading)
    return MetricState(grid, u=np.ones(grid.n_nodes), a=a, b=b, t=state.t,
                       k=state.k, geometry=state.geometry)


# -- initial data ----------------------------------------------------------------


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic smoothstep: 0 -> 1 on [0, 1] with two vanishing derivatives."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def make_initial_data(family: str, k: int, grid: RadialGrid, *, b0: float = 1.0,
                      scale: float = 1.0, cap_radius: float = 5.0, cap_width: float = 0.0,
                      s0: float = 1.0, file: Optional[str] = None,
                      eh_profile: Optional[EHProfile] = None) -> MetricState:
    """Build named initial data on the given grid (u = 1, so s = xi at t = 0).

    Families:
      tanh_cap               a = tanh(k xi), b = 1 (bundle)
      neck_cap               b dips to beta at the tip inside a width-w neck,
                             Q = tanh(k xi / beta), a = Q b (bundle); the tip
                             collapses long before the ambient cylinder moves
      cylinder               a = b = b0 homogeneous segment, no tip
      capped_cylinder        a = b0 tanh(k xi / b0), b = b0 (bundle)
      eh_capped_cylinder     scaled Ricci-flat cap blended into a cylinder
      flat                   a = b = xi + s0 segment (flat cone, tip excluded)
      from_file              snapshot from a CSV + sidecar pair
    """
    xi = grid.nodes
    ones = np.ones(grid.n_nodes)
    if family == "tanh_cap":
        state = MetricState(grid, u=ones, a=np.tanh(k * xi), b=ones.copy(), k=k)
    elif family == "neck_cap":
        beta = scale if scale < 1.0 else 0.3
        w = cap_width if cap_width > 0 else 1.0
        bfield = b0 - (b0 - beta) * np.exp(-((xi / w) ** 2))
        Qfield = np.tanh(k * xi / beta)
        state = MetricState(grid, u=ones, a=Qfield * bfield, b=bfield, k=k)
        rep = class_i_report(state)
        if not rep["member"]:
            raise ValueError(f"neck parameters leave the preserved class: {rep['margins']}")
    elif family == "cylinder":
        state = MetricState(grid, u=ones, a=np.full_like(xi, b0), b=np.full_like(xi, b0),
                            k=k, geometry="segment")
    elif family == "capped_cylinder":
        state = MetricState(grid, u=ones, a=b0 * np.tanh(k * xi / b0), b=np.full_like(xi, b0), k=k)
    elif family == "flat":
        state = MetricState(grid, u=ones, a=xi + s0, b=xi + s0, k=k, geometry="segment")
    elif family == "eh_capped_cylinder":
        state = _eh_capped_cylinder(k, grid, scale, cap_radius, cap_width, eh_profile)
    elif family == "from_file":
        if file is None:
            raise ValueError("from_file family needs a file path")
        from .grids import snapshot_from_csv
        from pathlib import Path
        p = Path(file)
        meta = p.with_suffix(".meta")
        state = snapshot_from_csv(p.read_text(), meta.read_text())
    else:
        raise ValueError(f"unknown initial-data family {family!r}")
    state.validate()
    return state


def _eh_capped_cylinder(k: int, grid: RadialGrid, scale: float, cap_radius: float,
                        cap_width: float, profile: Optional[EHProfile]) -> MetricState:
    if k != 2:
        raise ValueError("the Ricci-flat cap closes smoothly only for k = 2")
    w = cap_width if cap_width > 0 else cap_radius / 2.0
    s_hi = cap_radius + w
    if profile is None or profile.s_max * scale < s_hi:
        profile = integrate_eh(s_hi / scale + 1.0, ds=1e-3)
    # fine working mesh in s, then resample onto the grid
    ds = min(grid.min_spacing() / 2.0, 1e-3)
    n_fine = int(np.ceil(grid.xi_max / ds)) + 1
    s = np.linspace(0.0, grid.xi_max, n_fine)
    aE = scale * profile.a_spline()(s / scale)
    bE = scale * profile.b_spline()(s / scale)
    aE_s = profile.a_spline()(s / scale, 1)
    bE_s = profile.b_spline()(s / scale, 1)
    chi = 1.0 - _smoothstep((s - cap_radius) / w)
    a_s = aE_s * chi
    b_s = bE_s * chi
    h = np.diff(s)
    a = np.concatenate([[0.0], np.cumsum(0.5 * (a_s[:-1] + a_s[1:]) * h)])
    b = bE[0] + np.concatenate([[0.0], np.cumsum(0.5 * (b_s[:-1] + b_s[1:]) * h)])
    from scipy.interpolate import CubicSpline

    a_g = CubicSpline(s, a)(grid.nodes)
    b_g = CubicSpline(s, b)(grid.nodes)
    a_g[0] = 0.0
    state = MetricState(grid, u=np.ones(grid.n_nodes), a=a_g, b=b_g, k=k)
    report = class_i_report(state)
    bad = [name for name, margin in report["margins"].items() if margin < -1e-10]
    if bad:
        raise ValueError(f"cap parameters violate the preserved inequalities: {bad}")
    return state


# -- class-membership report -----------------------------------------------------


CLASS_I_INEQUALITIES = ("Q_le_1", "a_s_ge_0", "b_s_ge_0", "y_le_0")


def class_i_report(state: MetricState) -> dict:
    """Margins of the preserved-inequality class on one snapshot.

    Positive margins mean the inequality holds. Includes the two suprema the
    class definition requires to be finite.
    """
    q = scale_invariants(state)
    margins = {
        "Q_le_1": float(np.min(1.0 - q.Q)),
        "a_s_ge_0": float(np.min(q.a_s)),
        "b_s_ge_0": float(np.min(q.b_s)),
        "y_le_0": float(np.min(-q.y)),
    }
    return {
        "margins": margins,
        "sup_a_s": float(np.max(q.a_s)),
        "sup_abs_bbss": float(np.max(np.abs(q.bbss))),
        "member": all(m >= -1e-9 for m in margins.values()),
    }


# -- trajectory -------------------------------------------------------------------


MONITOR_MARGIN_NAMES = (
    "Q_le_1", "a_s_ge_0", "b_s_ge_0", "y_le_0", "x_le_0", "a_s_le_C",
    "T1_ge_0", "T2_ge_0", "T3_ge_0", "minT1T4_ge_0", "Hminus_le_0", "Hplus_ge_0",
)


def margin_fields(state: MetricState, a_s_cap: float, c_hpm: Optional[float] = None) -> dict:
    """Signed pointwise margins (>= 0 where the inequality holds)."""
    q = scale_invariants(state, c_hpm=c_hpm)
    return {
        "Q_le_1": 1.0 - q.Q,
        "a_s_ge_0": q.a_s,
        "b_s_ge_0": q.b_s,
        "y_le_0": -q.y,
        "x_le_0": -q.x,
        "a_s_le_C": a_s_cap - q.a_s,
        "T1_ge_0": q.T1,
        "T2_ge_0": q.T2,
        "T3_ge_0": q.T3,
        "minT1T4_ge_0": np.minimum(q.T1, q.T4),
        "Hminus_le_0": -q.Hminus,
        "Hplus_ge_0": q.Hplus,
    }


@dataclass
class Trajectory:
    """Time-ordered snapshots plus per-step monitors of one flow run."""

    k: int
    config: dict
    snapshots: list[MetricState] = field(default_factory=list)
    monitors: dict[str, list] = field(default_factory=dict)
    stop_reason: str = "t_max"
    t_sing: Optional[float] = None
    t_sing_sigma: Optional[float] = None
    class_i: dict = field(default_factory=dict)
    margin_minima: dict = field(default_factory=dict)
    boundary_contaminated: bool = False
    regrid_times: list[float] = field(default_factory=list)

    def monitor_array(self, name: str) -> np.ndarray:
        return np.asarray(self.monitors[name], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.monitor_array("t")

    @property
    def b_tip(self) -> np.ndarray:
        return self.monitor_array("b_tip")

    def snapshot_near_btip(self, target: float) -> MetricState:
        """Stored snapshot whose tip size is closest to the target."""
        vals = np.array([snap.b[0] for snap in self.snapshots])
        return self.snapshots[int(np.argmin(np.abs(vals - target)))]

    def snapshot_at_time(self, t: float) -> MetricState:
        vals = np.array([snap.t for snap in self.snapshots])
        return self.snapshots[int(np.argmin(np.abs(vals - t)))]


def estimate_t_sing(times: np.ndarray, b_tip: np.ndarray, n_fit: int = 20):
    """Extrapolate b^2(o, t) -> 0 with a least-squares line on the last rows."""
    n = min(n_fit, times.size)
    if n < 3:
        return None, None
    t = times[-n:]
    y = b_tip[-n:] ** 2
    A = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    m, c = coef
    if m >= 0:
        return None, None
    t_sing = -c / m
    resid = y - A @ coef
    sigma2 = float(resid @ resid) / max(n - 2, 1)
    cov = sigma2 * np.linalg.inv(A.T @ A)
    # var(T) by first-order propagation of T = -c/m
    var = cov[1, 1] / m**2 + cov[0, 0] * c**2 / m**4 - 2 * cov[0, 1] * c / m**3
    return float(t_sing), float(np.sqrt(max(var, 0.0)))


def run(config: FlowConfig, initial: Optional[MetricState] = None,
        progress: Optional[Callable[[int, float, float], None]] = None) -> Trajectory:
    """Integrate until a stop criterion fires.

    Stop reasons: 'singularity' (tip size or curvature threshold), 't_max',
    'instability' (non-finite values; last valid snapshot retained),
    'max_steps'.
    """
    config.validate()
    if initial is None:
        grid = config.build_grid()
        initial = make_initial_data(
            config.family, config.k, grid, b0=config.b0, scale=config.scale,
            cap_radius=config.cap_radius, cap_width=config.cap_width, s0=config.s0,
            file=config.file,
        )
    state = initial
    state.validate()
    bc = BoundaryData.from_state(state)

    traj = Trajectory(k=state.k, config=vars(config).copy())
    traj.class_i = class_i_report(state)

    q0 = scale_invariants(state, c_hpm=config.c_hpm)
    a_s_cap = max(2.0, float(np.max(q0.a_s)))
    h_min = state.grid.min_spacing()

    cols = ["t", "dt", "b_tip", "max_riem", "C1", "ds_dt_norm", "resolved"]
    cols += list(MONITOR_MARGIN_NAMES)
    traj.monitors = {c: [] for c in cols}
    minima = {name: (math.inf, 0.0, 0.0) for name in MONITOR_MARGIN_NAMES}

    def record(state: MetricState, dt: float) -> float:
        der = derivatives(state)
        frame = geometry.curvature(state, der)
        max_riem = float(np.nanmax(frame.riem_norm))
        c1 = float(np.nanmax(frame.riem_norm * state.b**2))
        dsdt = ds_dt(state)
        margins = margin_fields(state, a_s_cap, c_hpm=config.c_hpm)
        row = {
            "t": state.t, "dt": dt, "b_tip": float(state.b[0]), "max_riem": max_riem,
            "C1": c1, "ds_dt_norm": float(np.max(np.abs(dsdt))),
            "resolved": 1.0 if max_riem * h_min**2 <= 0.1 else 0.0,
        }
        for name, m in margins.items():
            j = int(np.argmin(m))
            val = float(m[j])
            row[name] = val
            if val < minima[name][0]:
                minima[name] = (val, state.t, float(state.grid.nodes[j]))
        for c in cols:
            traj.monitors[c].append(row[c])
        if state.geometry == "bundle" and frame.riem_norm[-1] > 0.01 * max(max_riem, 1e-300):
            traj.boundary_contaminated = True
        return max_riem

    traj.snapshots.append(state)
    max_riem = record(state, 0.0)
    next_snap_b = float(state.b[0]) * config.snapshot_btip_factor
    next_snap_t = state.t + config.snapshot_dt if config.snapshot_dt > 0 else math.inf

    def want_regrid(ops, u, b) -> bool:
        if not config.regrid:
            return False
        umin = float(np.min(u))
        umax = float(np.max(u))
        if umin < config.regrid_u_floor or umax > config.regrid_u_ceil:
            return True
        if state.geometry == "bundle":
            tip_ds = float(u[0]) * ops.grid.spacings[0]
            if tip_ds > float(b[0]) / (config.regrid_chi / config.regrid_slack):
                return True
        return False

    bundle = state.geometry == "bundle"
    grid = state.grid
    ops = state.ops
    u, a, b = state.u.copy(), state.a.copy(), state.b.copy()
    t = state.t
    stop = None
    steps = 0

    def materialize() -> MetricState:
        return MetricState(grid, u=u.copy(), a=a.copy(), b=b.copy(), t=t,
                           k=state.k, geometry=state.geometry)

    current = state
    while True:
        if t >= config.t_max:
            stop = "t_max"
            break
        if b[0] <= config.b_tip_min:
            stop = "singularity"
            break
        if max_riem >= config.riem_max:
            stop = "singularity"
            break
        if steps >= config.max_steps:
            stop = "max_steps"
            break
        if steps % config.regrid_check_every == 0 and want_regrid(ops, u, b):
            current = regrid_arclength(materialize(), chi=config.regrid_chi,
                                       ratio_cap=config.regrid_ratio_cap)
            grid, ops = current.grid, current.ops
            u, a, b = current.u.copy(), current.a.copy(), current.b.copy()
            bc = BoundaryData.from_state(current)
            traj.regrid_times.append(t)
        dt_expl = stable_dt_arrays(ops, u, config.cfl)
        dt_want = min(
            config.dt_max,
            config.tip_dt_factor * float(b[0]) ** 2,
            config.t_max - t,
        )
        u0, a0, b0 = u, a, b
        try:
            if config.stepper == "rk2":
                dt = min(dt_expl, dt_want)
                du, da, db = rhs_arrays(ops, bundle, u, a, b, bc)
                uh = u + 0.5 * dt * du
                ah = a + 0.5 * dt * da
                bh = b + 0.5 * dt * db
                if bundle:
                    ah[0] = 0.0
                du, da, db = rhs_arrays(ops, bundle, uh, ah, bh, bc)
                u = u + dt * du
                a = a + dt * da
                b = b + dt * db
            else:
                s_stages = rkc_stages_for(dt_want, dt_expl)
                dt = min(dt_want, 0.5 * _rkc_coeffs_cached(s_stages)[4] * dt_expl)
                u, a, b = rkc2_step_arrays(ops, bundle, u, a, b, dt, s_stages, bc)
            if bundle:
                a = a.copy() if a is a0 else a
                a[0] = 0.0
            bmin = float(np.min(b))
            umin = float(np.min(u))
            if not (bmin > 0.0 and umin > 0.0) or not np.isfinite(bmin + umin):
                raise StepError("nonpositive or non-finite fields")
        except StepError:
            u, a, b = u0, a0, b0
            stop = "instability"
            break
        t += dt
        steps += 1
        if steps % config.monitor_every == 0:
            current = materialize()
            max_riem = record(current, dt)
        if not np.isfinite(max_riem):
            stop = "instability"
            break
        if b[0] <= next_snap_b or t >= next_snap_t:
            traj.snapshots.append(materialize())
            next_snap_b = float(b[0]) * config.snapshot_btip_factor
            if config.snapshot_dt > 0:
                next_snap_t = t + config.snapshot_dt
        if progress and steps % 500 == 0:
            progress(steps, t, float(b[0]))

    final = materialize()
    if not traj.snapshots or traj.snapshots[-1].t != final.t:
        traj.snapshots.append(final)
        record(final, 0.0)
    traj.stop_reason = stop or "t_max"
    traj.margin_minima = {
        name: {"margin": v[0], "t": v[1], "xi": v[2]} for name, v in minima.items()
    }
    if traj.stop_reason == "singularity":
        traj.t_sing, traj.t_sing_sigma = estimate_t_sing(traj.times, traj.b_tip)
    return traj


# -- singularity classification ----------------------------------------------------


@dataclass(frozen=True)
class SingularityReport:
    verdict: str  # 'type_I' | 'type_II' | 'no_singularity'
    t_sing: Optional[float]
    t_sing_sigma: Optional[float]
    growth_factor_btip: Optional[float]
    growth_factor_riem: Optional[float]
    indicator_median: Optional[float]
    times: np.ndarray
    indicator_btip: np.ndarray
    indicator_riem: np.ndarray

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "t_sing": self.t_sing,
            "t_sing_sigma": self.t_sing_sigma,
            "growth_factor_btip": self.growth_factor_btip,
            "growth_factor_riem": self.growth_factor_riem,
            "indicator_median": self.indicator_median,
        }


def detect_singularity(traj: Trajectory, growth_threshold: float = 4.0,
                       min_samples: int = 10) -> SingularityReport:
    """Type I / Type II verdict from the rescaled blow-up indicators.

    The indicators are (T_sing - t) * b(o,t)^-2 and (T_sing - t) * max|Rm|;
    the verdict is Type II when the first grows by at least
    ``growth_threshold`` over the final decade of b(o,t), Type I when it
    plateaus. The threshold is a heuristic, not a theorem.
    """
    if traj.stop_reason != "singularity" or traj.t_sing is None:
        empty = np.array([])
        return SingularityReport("no_singularity", traj.t_sing, traj.t_sing_sigma,
                                 None, None, None, empty, empty, empty)
    t = traj.times
    b = traj.b_tip
    riem = traj.monitor_array("max_riem")
    mask = (traj.t_sing - t) > 0
    t, b, riem = t[mask], b[mask], riem[mask]
    ind_b = (traj.t_sing - t) / b**2
    ind_r = (traj.t_sing - t) * riem

    decade = b <= 10.0 * b[-1]
    if decade.sum() < min_samples:
        raise FlowError(
            f"only {int(decade.sum())} samples in the final decade of b(o,t); need {min_samples}"
        )
    ib = ind_b[decade]
    ir = ind_r[decade]
    head = max(1, ib.size // 20)
    growth_b = float(np.median(ib[-head:]) / np.median(ib[:head]))
    growth_r = float(np.median(ir[-head:]) / np.median(ir[:head]))
    verdict = "type_II" if growth_b >= growth_threshold else "type_I"
    return SingularityReport(
        verdict=verdict,
        t_sing=traj.t_sing,
        t_sing_sigma=traj.t_sing_sigma,
        growth_factor_btip=growth_b,
        growth_factor_riem=growth_r,
        indicator_median=float(np.median(ib)),
        times=t[decade],
        indicator_btip=ib,
        indicator_riem=ir,
    )
