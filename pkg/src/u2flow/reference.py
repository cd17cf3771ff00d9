"""Reference geometries: the Ricci-flat capped profile, exact cylinders and
the gradient-soliton shooting problem.

The capped Ricci-flat profile (the gravitational instanton on the k = 2
bundle) solves the autonomous first-order system

    a_s = 2 - Q^2,   b_s = Q,   Q = a/b,

from (a, b) = (0, 1). The shrinking-soliton problem integrates the coupled
second-order system for (a, b, f) outward from the tip and records where the
run leaves the admissible region, which is how the nonexistence of complete
shrinkers is exhibited numerically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .grids import MetricState, RadialGrid, format_float


# -- Eguchi-Hanson profile ----------------------------------------------------


@dataclass(frozen=True)
class EHProfile:
    s: np.ndarray
    a: np.ndarray
    b: np.ndarray
    ds: float
    s_max: float

    @property
    def Q(self) -> np.ndarray:
        Q = np.empty_like(self.s)
        Q[0] = 0.0
        Q[1:] = self.a[1:] / self.b[1:]
        return Q

    def a_spline(self) -> CubicSpline:
        return CubicSpline(self.s, self.a)

    def b_spline(self) -> CubicSpline:
        return CubicSpline(self.s, self.b)

    def to_csv(self) -> str:
        lines = ["s,a,b"]
        for j in range(self.s.size):
            lines.append(
                f"{format_float(self.s[j])},{format_float(self.a[j])},{format_float(self.b[j])}"
            )
        return "\n".join(lines) + "\n"


def _eh_rhs(ab: np.ndarray) -> np.ndarray:
    a, b = ab
    Q = a / b
    return np.array([2.0 - Q * Q, Q])


def integrate_eh(s_max: float, ds: float = 1e-3) -> EHProfile:
    """Fixed-step RK4 integration of the capped Ricci-flat profile.

    The system is globally smooth for b >= 1; the tip itself is a regular
    point of the first-order system since Q = a/b -> 0 there.
    """
    if s_max <= 0 or ds <= 0:
        raise ValueError("s_max and ds must be positive")
    n = int(np.ceil(s_max / ds))
    s = np.linspace(0.0, n * ds, n + 1)
    out = np.empty((n + 1, 2))
    out[0] = (0.0, 1.0)
    y = out[0].copy()
    for j in range(n):
        k1 = _eh_rhs(y)
        k2 = _eh_rhs(y + 0.5 * ds * k1)
        k3 = _eh_rhs(y + 0.5 * ds * k2)
        k4 = _eh_rhs(y + ds * k3)
        y = y + (ds / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[j + 1] = y
    return EHProfile(s=s, a=out[:, 0], b=out[:, 1], ds=ds, s_max=float(s[-1]))


def eh_as_metric_state(profile: EHProfile, grid: RadialGrid) -> MetricState:
    """Resample the profile onto a radial grid with u = 1 (so s = xi)."""
    if grid.xi_max > profile.s_max:
        raise ValueError(
            f"grid extends to {grid.xi_max}, beyond the profile range {profile.s_max}"
        )
    a = profile.a_spline()(grid.nodes)
    b = profile.b_spline()(grid.nodes)
    a[0] = 0.0
    return MetricState(grid, u=np.ones(grid.n_nodes), a=a, b=b, t=0.0, k=2)


# -- exact cylinder -----------------------------------------------------------


def cylinder_b(b0: float, t: float) -> float:
    """Exact cross-section size of the homogeneous shrinking cylinder."""
    if t >= b0**2 / 4.0:
        raise ValueError(f"t = {t} is past the cylinder extinction time {b0**2 / 4.0}")
    return float(np.sqrt(b0**2 - 4.0 * t))


def exact_cylinder(b0: float, t: float, grid: RadialGrid) -> MetricState:
    """Homogeneous cylinder a = b = sqrt(b0^2 - 4t) on a tipless segment."""
    val = cylinder_b(b0, t)
    n = grid.n_nodes
    return MetricState(
        grid,
        u=np.ones(n),
        a=np.full(n, val),
        b=np.full(n, val),
        t=t,
        k=2,
        geometry="segment",
    )


# -- gradient shrinking soliton ------------------------------------------------


@dataclass(frozen=True)
class SolitonState:
    """Outcome of one soliton shooting run.

    State vector along the run: (a, a_s, b, b_s, f_s). ``violation`` names the
    first admissibility failure ('y_diverged', 'b_nonpositive',
    'a_nonpositive', 'step_underflow') or None if s_max was reached.
    """

    k: int
    rho: float
    b0: float
    s: np.ndarray
    a: np.ndarray
    a_s: np.ndarray
    b: np.ndarray
    b_s: np.ndarray
    f_s: np.ndarray
    violation: Optional[str]
    violation_s: Optional[float]
    y_s0: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def Q(self) -> np.ndarray:
        return self.a / self.b

    @property
    def y(self) -> np.ndarray:
        return self.b_s - self.Q

    def violation_report(self) -> dict:
        return {
            "k": self.k,
            "rho": self.rho,
            "b0": self.b0,
            "violation": self.violation,
            "violation_s": self.violation_s,
            "y_s0": self.y_s0,
            "s_reached": float(self.s[-1]),
        }

    def to_csv(self) -> str:
        lines = ["s,a,a_s,b,b_s,f_s"]
        for j in range(self.s.size):
            lines.append(",".join(format_float(v) for v in (
                self.s[j], self.a[j], self.a_s[j], self.b[j], self.b_s[j], self.f_s[j])))
        return "\n".join(lines) + "\n"

    def violation_json(self) -> str:
        return json.dumps(self.violation_report(), sort_keys=True)


def soliton_rhs(state: np.ndarray, rho: float) -> np.ndarray:
    """First-order form of the soliton system away from the tip.

    state = (a, a_s, b, b_s, f_s); returns d/ds of each component, with
    a_ss, b_ss from the fiber/base equations and f_ss from their trace.
    """
    a, a_s, b, b_s, f_s = state
    a_ss = 2.0 * a**3 / b**4 - 2.0 * a_s * b_s / b + a_s * f_s - rho * a
    b_ss = 4.0 / b - 2.0 * a**2 / b**3 - a_s * b_s / a - b_s**2 / b + b_s * f_s - rho * b
    f_ss = rho + a_ss / a + 2.0 * b_ss / b
    return np.array([a_s, a_ss, b_s, b_ss, f_ss])


def soliton_residual(a, a_s, a_ss, b, b_s, b_ss, f_s, f_ss, rho) -> tuple[float, float, float]:
    """Residuals of the three soliton equations at one sample point."""
    r_f = f_ss - (rho + a_ss / a + 2.0 * b_ss / b)
    r_a = a_ss - (2.0 * a**3 / b**4 - 2.0 * a_s * b_s / b + a_s * f_s - rho * a)
    r_b = b_ss - (4.0 / b - 2.0 * a**2 / b**3 - a_s * b_s / a - b_s**2 / b + b_s * f_s - rho * b)
    return float(r_f), float(r_a), float(r_b)


def soliton_tip_seed(k: int, b0: float, rho: float, s_seed: float) -> np.ndarray:
    """Second-order series seed at s = s_seed.

    Regularity forces a(0) = 0, a_s(0) = k, b_s(0) = 0, f_s(0) = 0 and pins
    b_ss(0) = 2/b0 - rho b0/2. The third-order coefficient of a is a free
    shooting parameter of the tip; the seed fixes it to zero, the unique
    choice for which the truncated series satisfies the trace equation at the
    tip, giving f_ss(0) = 4/b0^2.
    """
    b2 = 2.0 / b0 - 0.5 * rho * b0
    f2 = rho + 2.0 * b2 / b0  # = 4/b0^2
    e = s_seed
    return np.array([
        k * e,
        float(k),
        b0 + 0.5 * b2 * e**2,
        b2 * e,
        f2 * e,
    ])


def _soliton_march(k: int, b0: float, rho: float, s_max: float, step: float,
                   y_cap: float, out_every: float):
    """Plain-float fixed-step RK4 march; samples decimated to ~out_every."""
    s = 10.0 * float(np.finfo(float).eps) ** (1.0 / 3.0) * b0
    a, a_s, b, b_s, f_s = (float(v) for v in soliton_tip_seed(k, b0, rho, s))
    s_vals = [s]
    samples = [(a, a_s, b, b_s, f_s)]
    violation = None
    violation_s = None
    next_out = s + out_every

    def rhs(a, a_s, b, b_s, f_s):
        a_ss = 2.0 * a**3 / b**4 - 2.0 * a_s * b_s / b + a_s * f_s - rho * a
        b_ss = 4.0 / b - 2.0 * a**2 / b**3 - a_s * b_s / a - b_s**2 / b + b_s * f_s - rho * b
        f_ss = rho + a_ss / a + 2.0 * b_ss / b
        return a_s, a_ss, b_s, b_ss, f_ss

    while s < s_max:
        h = min(step, s_max - s)
        try:
            k1 = rhs(a, a_s, b, b_s, f_s)
            k2 = rhs(a + 0.5 * h * k1[0], a_s + 0.5 * h * k1[1], b + 0.5 * h * k1[2],
                     b_s + 0.5 * h * k1[3], f_s + 0.5 * h * k1[4])
            k3 = rhs(a + 0.5 * h * k2[0], a_s + 0.5 * h * k2[1], b + 0.5 * h * k2[2],
                     b_s + 0.5 * h * k2[3], f_s + 0.5 * h * k2[4])
            k4 = rhs(a + h * k3[0], a_s + h * k3[1], b + h * k3[2],
                     b_s + h * k3[3], f_s + h * k3[4])
        except (ZeroDivisionError, OverflowError):
            violation, violation_s = "step_underflow", s
            break
        a += (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        a_s += (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        b += (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        b_s += (h / 6.0) * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        f_s += (h / 6.0) * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4])
        s += h
        vals = (a, a_s, b, b_s, f_s)
        if not all(v == v and abs(v) < 1e300 for v in vals):
            violation, violation_s = "step_underflow", s
            break
        if b <= 0.0:
            violation, violation_s = "b_nonpositive", s
        elif a <= 0.0:
            violation, violation_s = "a_nonpositive", s
        elif abs(b_s - a / b) > y_cap:
            violation, violation_s = "y_diverged", s
        if violation or s >= next_out or s >= s_max:
            s_vals.append(s)
            samples.append(vals)
            next_out = s + out_every
        if violation:
            break
    return np.array(s_vals), np.array(samples), violation, violation_s


def integrate_soliton(
    k: int,
    b0: float,
    rho: float,
    s_max: float,
    y_cap: float = 1e3,
    ds: float = 1e-3,
    rtol: float = 1e-8,
    max_halvings: int = 6,
) -> SolitonState:
    """Shoot the soliton system from the tip until s_max or a violation.

    Fixed-step RK4 with global step halving until two successive refinements
    agree to ``rtol`` relative. Agreement is measured at the last sample the
    refinements share before any violation, since the fields diverge at the
    violation point itself. rho > 0 is the shrinking case; rho = 0 (steady)
    is accepted for exploratory sweeps.
    """
    if b0 <= 0 or s_max <= 0:
        raise ValueError("b0 and s_max must be positive")
    if rho < 0:
        raise ValueError("expanding solitons (rho < 0) are not supported")

    out_every = max(ds, s_max / 5000.0)
    step = ds
    s_arr, data, violation, violation_s = _soliton_march(k, b0, rho, s_max, step,
                                                         y_cap, out_every)
    for _ in range(max_halvings):
        s2, d2, v2, vs2 = _soliton_march(k, b0, rho, s_max, step / 2.0, y_cap, out_every)
        # compare at a shared checkpoint comfortably before either endpoint
        s_check = 0.8 * min(s_arr[-1], s2[-1])
        j1 = int(np.searchsorted(s_arr, s_check))
        j2 = int(np.searchsorted(s2, s_check))
        j1 = min(j1, s_arr.size - 1)
        j2 = min(j2, s2.size - 1)
        ref = max(1.0, float(np.max(np.abs(data[j1]))))
        agree = (abs(s_arr[j1] - s2[j2]) < out_every * 1.5
                 and float(np.max(np.abs(d2[j2] - data[j1]))) / ref <= rtol
                 and v2 == violation)
        step /= 2.0
        s_arr, data, violation, violation_s = s2, d2, v2, vs2
        if agree:
            break

    a, a_s, b, b_s, f_s = data.T
    b2 = 2.0 / b0 - 0.5 * rho * b0
    y_s0 = b2 - k / b0
    G = _soliton_G(a, a_s, b, b_s)
    qs = (a_s - (a / b) * b_s) / b
    state = SolitonState(
        k=k, rho=rho, b0=b0, s=s_arr, a=a, a_s=a_s, b=b, b_s=b_s, f_s=f_s,
        violation=violation, violation_s=violation_s, y_s0=float(y_s0),
        diagnostics={
            "min_Q_s": float(qs.min()),
            "min_G": float(G.min()),
            "min_y": float((b_s - a / b).min()),
            "final_step": step,
        },
    )
    return state


def _soliton_G(a, a_s, b, b_s) -> np.ndarray:
    """G = (x+2)^2 + Q^2 (2x + y^2), positive wherever Q <= 1 and T1 > 0."""
    Q = a / b
    x = a_s + Q**2 - 2.0
    y = b_s - Q
    return (x + 2.0) ** 2 + Q**2 * (2.0 * x + y**2)


def soliton_potential_asymptotics(state: SolitonState) -> dict:
    """Least-squares slope of f_s/s over the last third of the run vs rho.

    Shrinkers have quadratically growing potential, so the slope should
    approach rho on runs reaching s_max without violation.
    """
    if state.violation is not None:
        raise ValueError(f"run terminated early with violation {state.violation!r}")
    n = state.s.size
    lo = (2 * n) // 3
    sl = state.s[lo:]
    ratio = state.f_s[lo:] / sl
    slope = float(np.mean(ratio))
    return {
        "slope": slope,
        "rho": state.rho,
        "abs_error": abs(slope - state.rho),
        "window": [float(sl[0]), float(sl[-1])],
    }
