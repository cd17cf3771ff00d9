"""The one-parameter deformation family f_theta and its quadratic form.

For theta in (0, 1], f_theta: [0, 1] -> [0, 1] solves a second-order ODE in
r = Q^2 from f(0) = theta up to the first point Q_theta where f reaches 1,
and is extended by the constant 1 beyond. The family deforms the conserved
quantity T_1/Q^2 into Z_theta = x/Q^2 + f_theta(Q), whose evolution carries
the quadratic form w_theta(z) = A0 + A1 z + A2 z^2; the defining ODE is
exactly the statement w_theta(1 - f) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .geometry import scale_invariants
from .grids import MetricState, format_float


class FThetaError(ValueError):
    pass


def f_rr_ode(r: float, f: float, f_r: float) -> float:
    """Second derivative in r = Q^2 away from the endpoints."""
    return (
        (6.0 * r - 4.0 - r * f) * f_r / (2.0 * (1.0 - r))
        + f * (f**2 * r + 3.0 * f * r - 6.0 * f - 6.0 * r + 8.0) / (8.0 * (1.0 - r) ** 2)
    ) / r


def initial_slope(theta: float) -> float:
    """f_r(0) forced by regularity of the ODE at r = 0."""
    return 0.5 * theta - 0.375 * theta**2


def _series_seed(theta: float, r0: float) -> tuple[float, float]:
    """Two-term series values (f, f_r) at a small r0 > 0."""
    c1 = initial_slope(theta)
    # second-order coefficient from matching the r^1 terms of the ODE
    c2 = (c1 * (2.0 - theta) / 2.0
          + (theta**3 - 9.0 * theta**2 + 10.0 * theta + c1 * (8.0 - 12.0 * theta)) / 8.0) / 6.0
    return theta + c1 * r0 + c2 * r0**2, c1 + 2.0 * c2 * r0


@dataclass(frozen=True)
class FThetaSolution:
    """Sampled deformation profile with its flat extension beyond Q_theta."""

    theta: float
    r: np.ndarray
    f: np.ndarray
    f_r: np.ndarray
    Q_theta: float
    dr: float
    inconclusive_tail: bool = False

    def evaluate(self, Q: np.ndarray):
        """(f, f', f'', f'/Q) at the requested roundness values.

        Derivatives are with respect to Q; on the flat branch Q >= Q_theta
        they vanish. f'' comes from the defining ODE evaluated on the
        interpolated (f, f_r), and f'/Q = 2 f_r extends evenly through 0.
        """
        Q = np.atleast_1d(np.asarray(Q, dtype=float))
        r = Q**2
        f = np.ones_like(r)
        fp = np.zeros_like(r)
        fpp = np.zeros_like(r)
        fp_over_q = np.zeros_like(r)
        ode = r < self.Q_theta**2
        if np.any(ode):
            rr = r[ode]
            f_i = self._f_spline(rr)
            fr_i = self._fr_spline(rr)
            f[ode] = f_i
            fp[ode] = 2.0 * Q[ode] * fr_i
            frr = np.array([
                f_rr_ode(max(rv, 1e-300), fv, frv) if rv > self.dr * 1e-3
                else 0.0
                for rv, fv, frv in zip(rr, f_i, fr_i)
            ])
            small = rr <= self.dr * 1e-3
            if np.any(small):
                frr[small] = self._frr0()
            fpp[ode] = 2.0 * fr_i + 4.0 * rr * frr
            fp_over_q[ode] = 2.0 * fr_i
        return f, fp, fpp, fp_over_q

    def _frr0(self) -> float:
        c1 = initial_slope(self.theta)
        c2 = (c1 * (2.0 - self.theta) / 2.0
              + (self.theta**3 - 9.0 * self.theta**2 + 10.0 * self.theta
                 + c1 * (8.0 - 12.0 * self.theta)) / 8.0) / 6.0
        return 2.0 * c2

    @property
    def _f_spline(self):
        sp = getattr(self, "_f_sp", None)
        if sp is None:
            sp = CubicSpline(self.r, self.f)
            object.__setattr__(self, "_f_sp", sp)
        return sp

    @property
    def _fr_spline(self):
        sp = getattr(self, "_fr_sp", None)
        if sp is None:
            sp = CubicSpline(self.r, self.f_r)
            object.__setattr__(self, "_fr_sp", sp)
        return sp

    def to_csv(self) -> str:
        lines = ["r,f,f_r"]
        for j in range(self.r.size):
            lines.append(",".join(format_float(v) for v in (self.r[j], self.f[j], self.f_r[j])))
        return "\n".join(lines) + "\n"


def solve_ftheta(theta: float, dr: float = 1e-4) -> FThetaSolution:
    """Integrate the deformation ODE from r = 0 until f reaches 1.

    theta = 1 short-circuits to the constant profile with Q_theta = 0. A
    run that reaches r -> 1 without f attaining 1 is flagged as an
    inconclusive tail (expected only as theta -> 0).
    """
    if not (0.0 < theta <= 1.0):
        raise FThetaError("theta must lie in (0, 1]")
    if dr <= 0:
        raise FThetaError("dr must be positive")
    if theta == 1.0:
        r = np.array([0.0])
        return FThetaSolution(theta, r, np.array([1.0]), np.array([initial_slope(1.0)]),
                              Q_theta=0.0, dr=dr)

    r0 = min(dr * 1e-2, 1e-8)
    y0 = _series_seed(theta, r0)

    def rhs(r, y):
        return [y[1], f_rr_ode(r, y[0], y[1])]

    def reach_one(r, y):
        return y[0] - 1.0

    reach_one.terminal = True
    reach_one.direction = 1.0

    r_end = 1.0 - 1e-10
    sol = solve_ivp(rhs, (r0, r_end), y0, method="RK45", rtol=1e-11, atol=1e-13,
                    dense_output=True, events=reach_one, max_step=0.01)
    if sol.status < 0:
        raise FThetaError(f"integration failed: {sol.message}")
    inconclusive = sol.status == 0  # hit r_end without the event
    r_stop = float(sol.t_events[0][0]) if sol.t_events[0].size else float(sol.t[-1])
    Q_theta = float(np.sqrt(r_stop)) if not inconclusive else 1.0

    n = max(2, int(np.ceil(r_stop / dr)))
    r = np.linspace(0.0, r_stop, n + 1)
    f = np.empty_like(r)
    f_r = np.empty_like(r)
    f[0], f_r[0] = theta, initial_slope(theta)
    inside = r[1:] < r0
    vals = sol.sol(np.clip(r[1:], r0, r_stop))
    f[1:] = vals[0]
    f_r[1:] = vals[1]
    if np.any(inside):
        # fill the seed region from the series
        for j in np.where(inside)[0] + 1:
            f[j], f_r[j] = _series_seed(theta, r[j])
    if not inconclusive:
        f[-1] = 1.0
    return FThetaSolution(theta, r, f, f_r, Q_theta=Q_theta, dr=dr,
                          inconclusive_tail=inconclusive)


# -- quadratic-form coefficients -----------------------------------------------


def w_coefficients(Q, f, f_prime, f_double, fp_over_q=None):
    """(A0, A1, A2) of the quadratic form w(z) = A0 + A1 z + A2 z^2.

    The f'/Q combination extends evenly through Q = 0 (limit f''); pass it
    explicitly when evaluating at the tip.
    """
    Q = np.asarray(Q, dtype=float)
    f = np.asarray(f, dtype=float)
    fp = np.asarray(f_prime, dtype=float)
    fpp = np.asarray(f_double, dtype=float)
    if fp_over_q is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            fp_over_q = np.where(Q > 0, fp / np.where(Q > 0, Q, 1.0), fpp)
    A0 = (-Q**4 * f**2 * fpp - 2 * Q**4 * f * fpp - Q**4 * fpp
          + 4 * Q**2 * f * fpp + 4 * Q**2 * fpp - 4 * fpp
          - 3 * Q**3 * f**2 * fp - 6 * Q**3 * f * fp - 7 * Q**3 * fp
          + 12 * Q * f * fp + 16 * Q * fp - 12 * fp_over_q
          - 2 * Q**2 * f + 8 * f - 2 * Q**2 - 4)
    A1 = (-2 * Q**4 * f * fpp - 2 * Q**4 * fpp + 4 * Q**2 * fpp
          - 8 * Q**3 * f * fp - 8 * Q**3 * fp + 16 * Q * fp
          - 4 * Q**2 * f**2 - 8 * Q**2 * f + 8 * f + 4 * Q**2 + 8)
    A2 = -Q**4 * fpp - 5 * Q**3 * fp - 2 * Q**2 * f - 2 * Q**2 - 4
    return A0, A1, A2


def cz_coefficients(Q, b_s, f, fp, fpp, fp_over_q=None):
    """(C0, C1, C2) of the deformation-quantity evolution equation."""
    A0, A1, A2 = w_coefficients(Q, f, fp, fpp, fp_over_q)
    Q = np.asarray(Q, dtype=float)
    b_s = np.asarray(b_s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        bs_over_q = np.where(Q > 0, b_s / np.where(Q > 0, Q, 1.0), 0.0)
        C0 = A0 + A1 * bs_over_q + A2 * bs_over_q**2
        C1 = (2 * Q**3 * b_s * fpp + 8 * Q**2 * b_s * fp + 8 * f * Q * b_s
              + 8 * Q * b_s - 8 * bs_over_q + 2 * b_s**2
              + 2 * f * Q**4 * fpp + 2 * Q**4 * fpp - 4 * Q**2 * fpp
              + 6 * f * Q**3 * fp + 6 * Q**3 * fp - 12 * Q * fp + 2 * Q**2 - 8)
    C2 = -4 * Q * b_s - Q**4 * fpp - 3 * Q**3 * fp
    return C0, C1, C2


def w_identity_residual(sol: FThetaSolution, n: int = 801) -> float:
    """sup |w_theta(1 - f)| along the solution; zero is the defining ODE."""
    if sol.Q_theta <= 0:
        return 0.0
    Q = np.linspace(0.0, sol.Q_theta * (1.0 - 1e-9), n)
    f, fp, fpp, fpq = sol.evaluate(Q)
    A0, A1, A2 = w_coefficients(Q, f, fp, fpp, fpq)
    z = 1.0 - f
    return float(np.max(np.abs(A0 + A1 * z + A2 * z**2)))


# -- state-level quantities -------------------------------------------------------


def z_theta(state: MetricState, sol: FThetaSolution) -> np.ndarray:
    """Z_theta = x/Q^2 + f_theta(Q) with its smooth tip extension.

    The x/Q^2 piece extends to the tip only when x vanishes there, i.e. for
    twisting number 2; other states are rejected.
    """
    if state.k != 2:
        raise FThetaError("the deformation quantity needs k = 2 (x must vanish at the tip)")
    from .evolution import Context, _x_over_q2

    ctx = Context(state, sol)
    f = sol.evaluate(ctx.Q)[0]
    return _x_over_q2(ctx) + f


def borders_check(state: MetricState, sol: FThetaSolution) -> dict:
    """Margins of the two-sided bound on b_s/Q - Z_theta, hypothesis-gated.

    Lower bound 1 - f; upper bound min(1, -f + 3/Q^2 - 2). Reported only at
    nodes where the hypotheses (y <= 0, T2 >= 0, T3 >= 0, Z_theta >= 0)
    hold; the tip is excluded since the bound divides by Q.
    """
    q = scale_invariants(state)
    Z = z_theta(state, sol)
    f = sol.evaluate(q.Q)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = q.b_s / q.Q - Z
        upper = np.minimum(1.0, -f + 3.0 / q.Q**2 - 2.0)
    lower = 1.0 - f
    gate = (q.y <= 1e-12) & (q.T2 >= -1e-12) & (q.T3 >= -1e-12) & (Z >= -1e-12)
    gate[0] = False
    return {
        "lower_margin": mid - lower,
        "upper_margin": upper - mid,
        "gate": gate,
        "min_lower": float(np.min((mid - lower)[gate])) if gate.any() else np.nan,
        "min_upper": float(np.min((upper - mid)[gate])) if gate.any() else np.nan,
    }


def quadratic_positive_check(sol: FThetaSolution, n: int = 2001) -> "CertificateReport":
    """Dense-sampling verdict on the sign structure of the quadratic form.

    Checks beta = w(1) > 0 where f <= 3(1-Q^2)/Q^2, gamma = w(-f + 3/Q^2 - 2)
    > 0 on the complement, and A2 < 0 throughout (0 <= Q < Q_theta). The
    verdict is non-exact by construction: it samples the numerically
    computed profile.
    """
    from .certificates import CertificateReport

    if sol.Q_theta <= 0.0:
        return CertificateReport(
            claim=f"quadratic_form_signs[theta={sol.theta}]",
            region="empty (flat profile)",
            method="dense_sampling",
            verdict="verified",
            witness={"n_samples": 0},
        )
    Q = np.linspace(0.0, sol.Q_theta * (1.0 - 1e-9), n)
    f, fp, fpp, fpq = sol.evaluate(Q)
    A0, A1, A2 = w_coefficients(Q, f, fp, fpp, fpq)
    with np.errstate(divide="ignore"):
        beta_region = np.empty_like(Q, dtype=bool)
        beta_region[0] = True
        beta_region[1:] = f[1:] <= 3.0 * (1.0 - Q[1:] ** 2) / Q[1:] ** 2
    beta = (A0 + A1 + A2)[beta_region]
    gam_region = ~beta_region
    witness = {
        "n_samples": int(n),
        "min_beta": float(beta.min()) if beta.size else np.inf,
        "max_A2": float(A2.max()),
        "theta": sol.theta,
    }
    ok = bool(np.all(beta > 0)) and bool(np.all(A2 < 0))
    if gam_region.any():
        Qg = Q[gam_region]
        zg = -f[gam_region] + 3.0 / Qg**2 - 2.0
        gamma = A0[gam_region] + A1[gam_region] * zg + A2[gam_region] * zg**2
        witness["min_gamma"] = float(gamma.min())
        ok = ok and bool(np.all(gamma > 0))
    verdict = "verified" if ok else "refuted"
    if sol.inconclusive_tail:
        verdict = "inconclusive"
    return CertificateReport(
        claim=f"quadratic_form_signs[theta={sol.theta}]",
        region=f"0 <= Q < Q_theta = {sol.Q_theta:.6f}",
        method="dense_sampling",
        verdict=verdict,
        witness=witness,
    )
