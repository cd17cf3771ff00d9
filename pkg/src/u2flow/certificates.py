"""Exact positivity certificates for the polynomial inequalities.

Everything in this module that claims exactness runs over the rationals:
univariate claims via Sturm sign-change counts, boundary-curve claims via
exact factorization identities checked by interpolation-degree evaluation,
and two-variable interiors via the monotonicity/critical-point reductions
mirrored from the proofs plus an exact rational lattice sweep. Verdicts from
floating-point sampling are never labeled exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

Q0 = Fraction(0)
Q1 = Fraction(1)


# -- dense univariate polynomials over the rationals -----------------------------


def poly_trim(p: list[Fraction]) -> list[Fraction]:
    while p and p[-1] == 0:
        p.pop()
    return p


def poly_add(p, q):
    n = max(len(p), len(q))
    return poly_trim([(p[i] if i < len(p) else Q0) + (q[i] if i < len(q) else Q0)
                      for i in range(n)])


def poly_scale(p, c: Fraction):
    return poly_trim([c * v for v in p])


def poly_mul(p, q):
    if not p or not q:
        return []
    out = [Q0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        for j, b in enumerate(q):
            out[i + j] += a * b
    return poly_trim(out)


def poly_eval(p, x: Fraction) -> Fraction:
    acc = Q0
    for c in reversed(p):
        acc = acc * x + c
    return acc


def poly_deriv(p):
    return poly_trim([c * i for i, c in enumerate(p)][1:])


def poly_divmod(p, q):
    p = list(p)
    q = poly_trim(list(q))
    if not q:
        raise ZeroDivisionError("polynomial division by zero")
    out = [Q0] * max(0, len(p) - len(q) + 1)
    while len(p) >= len(q) and poly_trim(p):
        shift = len(p) - len(q)
        c = p[-1] / q[-1]
        out[shift] = c
        for i, v in enumerate(q):
            p[i + shift] -= c * v
        poly_trim(p)
    return poly_trim(out), poly_trim(p)


def rational(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    raise TypeError(f"exact arithmetic requires int or Fraction, got {type(x).__name__}")


def as_poly(coeffs: Sequence) -> list[Fraction]:
    """Ascending-order coefficient list with exact entries."""
    return poly_trim([rational(c) for c in coeffs])


# -- Sturm sequences ----------------------------------------------------------------


def sturm_chain(p: list[Fraction]) -> list[list[Fraction]]:
    chain = [list(p), poly_deriv(p)]
    while chain[-1]:
        _, rem = poly_divmod(chain[-2], chain[-1])
        if not rem:
            break
        chain.append(poly_scale(rem, Fraction(-1)))
    return [c for c in chain if c]


def sign_changes(chain, x: Fraction) -> int:
    signs = []
    for p in chain:
        v = poly_eval(p, x)
        if v != 0:
            signs.append(1 if v > 0 else -1)
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def count_roots(p: list[Fraction], lo: Fraction, hi: Fraction) -> int:
    """Distinct real roots of p in (lo, hi], square-free part implied.

    Multiplicities collapse since the Sturm chain ends at the gcd.
    """
    chain = sturm_chain(p)
    return sign_changes(chain, lo) - sign_changes(chain, hi)


@dataclass
class CertificateReport:
    claim: str
    region: str
    method: str  # 'sturm_exact' | 'boundary_factorization_exact' | 'dense_sampling'
    verdict: str  # 'verified' | 'refuted' | 'inconclusive'
    witness: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        w = {}
        for k, v in self.witness.items():
            w[k] = str(v) if isinstance(v, Fraction) else v
        return {"claim": self.claim, "region": self.region, "method": self.method,
                "verdict": self.verdict, "witness": w}


class RefutedError(RuntimeError):
    def __init__(self, report: CertificateReport):
        super().__init__(f"{report.claim}: refuted with witness {report.witness}")
        self.report = report


def sturm_positive(coeffs: Sequence, interval: tuple, strict: bool = True,
                   claim: str = "") -> CertificateReport:
    """Exact positivity of a rational-coefficient polynomial on [lo, hi].

    No roots in the interval (Sturm count on (lo, hi] plus endpoint checks)
    together with one positive sample value certifies positivity; a root or
    a nonpositive sample refutes it. With strict=False, roots are allowed
    as long as the polynomial never becomes negative, certified by
    root-counting on the derivative-refined subintervals; for the claims
    handled here nonnegativity is always established through factorizations
    instead, so strict=False only tolerates endpoint zeros.
    """
    p = as_poly(coeffs)
    lo, hi = rational(interval[0]), rational(interval[1])
    name = claim or f"positive_on[{lo},{hi}]"
    if not p:
        return CertificateReport(name, f"[{lo},{hi}]", "sturm_exact", "refuted",
                                 {"reason": "zero polynomial"})
    if len(p) == 1:
        ok = p[0] > 0 or (not strict and p[0] >= 0)
        return CertificateReport(name, f"[{lo},{hi}]", "sturm_exact",
                                 "verified" if ok else "refuted",
                                 {"constant": p[0]})
    v_lo, v_hi = poly_eval(p, lo), poly_eval(p, hi)
    n_roots = count_roots(p, lo, hi)
    witness = {"endpoint_lo": v_lo, "endpoint_hi": v_hi, "roots_in_interval": n_roots}
    interior_roots = n_roots - (1 if v_hi == 0 else 0)
    if strict:
        ok = v_lo > 0 and v_hi > 0 and n_roots == 0
    else:
        mid = poly_eval(p, (lo + hi) / 2)
        ok = v_lo >= 0 and v_hi >= 0 and interior_roots == 0 and (
            mid > 0 or (v_lo == 0 and v_hi == 0 and len(p) <= 1))
        witness["midpoint"] = mid
    return CertificateReport(name, f"[{lo},{hi}]", "sturm_exact",
                             "verified" if ok else "refuted", witness)


def sturm_negative(coeffs: Sequence, interval: tuple, strict: bool = True,
                   claim: str = "") -> CertificateReport:
    rep = sturm_positive([-rational(c) for c in coeffs], interval, strict,
                         claim or "negative")
    rep.claim = claim or rep.claim
    return rep


# -- exact identity checking ---------------------------------------------------------


def identity_check(lhs: Callable[..., Fraction], rhs: Callable[..., Fraction],
                   degree_bound: int, n_vars: int, claim: str,
                   n_points: int = 0) -> CertificateReport:
    """Exact equality of two polynomial expressions via evaluation.

    Two polynomials of degree <= degree_bound per variable agree identically
    iff they agree on a grid with degree_bound + 1 distinct values per
    variable; the sweep uses rational points only.
    """
    per_axis = max(degree_bound + 1, n_points)
    pts = [Fraction(i, per_axis) for i in range(per_axis + 1)]
    idx = [0] * n_vars
    count = 0
    while True:
        args = tuple(pts[i] for i in idx)
        lv, rv = lhs(*args), rhs(*args)
        if lv != rv:
            return CertificateReport(
                claim, f"lattice {per_axis + 1}^{n_vars}", "boundary_factorization_exact",
                "refuted", {"point": [str(a) for a in args], "lhs": lv, "rhs": rv})
        count += 1
        for d in range(n_vars):
            idx[d] += 1
            if idx[d] <= per_axis:
                break
            idx[d] = 0
        else:
            break
    return CertificateReport(claim, f"lattice {per_axis + 1}^{n_vars}",
                             "boundary_factorization_exact", "verified",
                             {"points_checked": count})


def lattice_sign_check(fn: Callable[..., Fraction], bounds: list[tuple], sign: int,
                       claim: str, resolution: int = 256, strict: bool = False,
                       region: Optional[Callable[..., bool]] = None) -> CertificateReport:
    """Exact rational evaluation on a lattice, verifying a sign condition.

    Supplementary evidence for two-variable interiors (the decisive step is
    always a reduction certified exactly elsewhere); still exact at every
    lattice point.
    """
    n_vars = len(bounds)
    axes = []
    for lo, hi in bounds:
        lo, hi = rational(lo), rational(hi)
        axes.append([lo + (hi - lo) * Fraction(i, resolution) for i in range(resolution + 1)])
    idx = [0] * n_vars
    worst = None
    count = 0
    while True:
        args = tuple(axes[d][idx[d]] for d in range(n_vars))
        if region is None or region(*args):
            v = fn(*args)
            count += 1
            if worst is None or sign * v < sign * worst[0]:
                worst = (v, args)
            bad = (sign * v <= 0) if strict else (sign * v < 0)
            if bad:
                return CertificateReport(
                    claim, f"lattice 1/{resolution}", "dense_sampling", "refuted",
                    {"point": [str(a) for a in args], "value": v})
        for d in range(n_vars):
            idx[d] += 1
            if idx[d] <= resolution:
                break
            idx[d] = 0
        else:
            break
    return CertificateReport(
        claim, f"lattice 1/{resolution}", "dense_sampling", "verified",
        {"points_checked": count,
         "min_abs_value": worst[0] if worst else None,
         "at": [str(a) for a in worst[1]] if worst else None})


# -- the specific claims --------------------------------------------------------------


def _frac_poly2(fn):
    """Wrap a two-variable rational-arithmetic lambda."""
    return fn


def certify_paper_polynomials(lattice_resolution: int = 256) -> list[CertificateReport]:
    """Run the full battery of exact polynomial certificates.

    Raises RefutedError at the first refuted sub-claim (with its witness);
    on success returns one report per claim, most with method sturm_exact
    or boundary_factorization_exact, plus supplementary exact lattice
    sweeps of the two-variable interiors.
    """
    reports: list[CertificateReport] = []

    def run(rep: CertificateReport):
        reports.append(rep)
        if rep.verdict == "refuted":
            raise RefutedError(rep)

    half = Fraction(1, 2)

    # --- concavity source term of the T_1 evolution --------------------------------
    # q(y) = -4(1+r) y^2 + 8 sqrt(r)(1-2r) y + 16 r(1-r) at y = 0 and y = -Q,
    # with r = Q^2: values 16 r (1-r) and 4 r (1-r); leading coefficient
    # -4(1+r) < 0 gives concavity, so q >= 0 on the segment [-Q, 0].
    run(identity_check(
        lambda Qv: (-4 * (1 + Qv**2) * Qv**2 + 8 * Qv * (1 - 2 * Qv**2) * (-Qv)
                    + 16 * Qv**2 * (1 - Qv**2)),
        lambda Qv: 4 * Qv**2 * (1 - Qv**2),
        degree_bound=4, n_vars=1, claim="T1_source_at_y_eq_minusQ"))
    run(sturm_positive([0, 16, -16], (0, 1), strict=False, claim="T1_source_at_y0: 16r(1-r) >= 0"))
    run(sturm_positive([0, 4, -4], (0, 1), strict=False, claim="T1_source_at_yQ: 4r(1-r) >= 0"))
    run(sturm_positive([4, 4], (0, 1), claim="T1_source_concavity: 4(1+r) > 0"))

    # --- the positivity identity for the soliton-obstruction term G ----------------
    # (x+2)^2 + Q^2 (2Qy + 4(Q^2-1) + y^2) == a_s^2 + Q^2 b_s^2 + 2 Q^2 T_1
    def G_lhs(A, B, Qv):
        x = A + Qv**2 - 2
        y = B - Qv
        return (x + 2) ** 2 + Qv**2 * (2 * Qv * y + 4 * (Qv**2 - 1) + y**2)

    def G_rhs(A, B, Qv):
        T1 = A + 2 * Qv**2 - 2
        return A**2 + Qv**2 * B**2 + 2 * Qv**2 * T1

    run(identity_check(G_lhs, G_rhs, degree_bound=4, n_vars=3,
                       claim="G_lower_bound_identity"))

    # --- monotone reduction of the profile-monotonicity polynomial p1 --------------
    run(sturm_negative([-6, 3, 1], (0, 1), claim="p1_dr: f^2+3f-6 < 0 on [0,1]"))
    run(identity_check(lambda fv: fv**2 - 3 * fv + 2, lambda fv: (1 - fv) * (2 - fv),
                       degree_bound=2, n_vars=1, claim="p1_boundary_factorization"))
    run(sturm_positive([1, -1], (0, 1), strict=False, claim="p1_factor: 1-f >= 0"))
    run(sturm_positive([2, -1], (0, 1), claim="p1_factor: 2-f > 0"))

    # --- concavity coefficient A2: p2 >= 0 via F = f Q^2 ---------------------------
    # d(p2~)/dr = 3F^2 - 4 F r + 12(r^2 - 1), convex in r; endpoints r = 0, 1.
    run(sturm_negative([-12, 0, 3], (0, 1), claim="p2_dr_at_r0: 3F^2-12 < 0"))
    run(sturm_positive([0, 4, -3], (0, 1), strict=False,
                       claim="p2_dr_at_r1: -(3F^2-4F) = F(4-3F) >= 0"))
    run(identity_check(lambda Fv: (Fv - 2) * (Fv - 1) * Fv,
                       lambda Fv: Fv**3 - 3 * Fv**2 + 2 * Fv,
                       degree_bound=3, n_vars=1, claim="p2_boundary_factorization"))
    run(lattice_sign_check(
        lambda fv, r: (fv**3 * r**3 + 3 * fv**2 * r**3 - 6 * fv**2 * r**2
                       - 2 * fv * r**3 + 4 * fv * r + 4 * r**3 - 12 * r + 8),
        [(0, 1), (0, 1)], sign=+1, claim="p2_interior_lattice",
        resolution=lattice_resolution))

    # --- beta positivity: p3 and p4 -------------------------------------------------
    run(sturm_negative([-2, -4], (0, 1), claim="p3_dr_at_r0: -2-4f < 0"))
    run(sturm_negative([-6, 0, 2], (0, 1), claim="p3_dr_at_r1: 2f^2-6 < 0"))

    def p3(fv, r):
        return r**2 * fv**2 + 2 * r**2 * fv - 4 * r * fv - 2 * r**2 - 2 * r + 4

    run(identity_check(
        lambda fv: p3(fv, Fraction(3, 1) / (3 + fv)) * (3 + fv) ** 2,
        lambda fv: fv**2,
        degree_bound=4, n_vars=1, n_points=256,
        claim="p3_lower_boundary: p3(f, 3/(3+f)) = (f/(3+f))^2"))
    run(lattice_sign_check(p3, [(0, 1), (0, 1)], sign=+1, claim="p3_interior_lattice",
                           resolution=lattice_resolution,
                           region=lambda fv, r: fv * r <= 3 * (1 - r)))

    # p4~ (F, r) with F = f Q^2: concave in F, vertex right of the region,
    # so the maximum of d(p4~)/dr over F sits on the right edge.
    def dp4_dr(Fv, r):
        return -7 * Fv**2 - 4 * Fv * (-9 + 5 * r) + 4 * (-9 + 4 * r + 3 * r**2)

    run(sturm_negative([-36, 16, 12], (0, 1), claim="p4_dr_at_F0: 4(3r^2+4r-9) < 0"))
    run(sturm_negative([-36, 52, -15], (0, Fraction(3, 4)),
                       claim="p4_dr_on_F_eq_r_branch: -15r^2+52r-36 < 0"))
    run(sturm_negative([9, -26, 9], (Fraction(3, 4), 1),
                       claim="p4_dr_on_F_eq_3(1-r)_branch: 9r^2-26r+9 < 0"))
    run(sturm_positive([18 - Fraction(21, 4), -10], (0, 1),
                       claim="p4_dr_vertex_right_of_region: 2(9-5r)/7 > 3/4"))

    def p4t(Fv, r):
        return (24 - 28 * Fv + 10 * Fv**2 - Fv**3 + (-7 * Fv**2 + 36 * Fv - 36) * r
                + (8 - 10 * Fv) * r**2 + 4 * r**3)

    run(identity_check(
        lambda Fv: p4t(Fv, (3 - Fv) / 3) * 27,
        lambda Fv: Fv * (2 * Fv**2 - 3 * Fv + 18),
        degree_bound=6, n_vars=1, n_points=256,
        claim="p4_lower_boundary: p4~(F, (3-F)/3) = F(2F^2-3F+18)/27"))
    run(sturm_positive([18, -3, 2], (0, 1), claim="p4_factor: 2F^2-3F+18 > 0"))
    run(lattice_sign_check(p4t, [(0, 1), (0, 1)], sign=+1, claim="p4_interior_lattice",
                           resolution=lattice_resolution,
                           region=lambda Fv, r: Fv <= r and Fv <= 3 * (1 - r) and Fv > 0))

    # --- gamma positivity: p5 via critical-point exclusion --------------------------
    run(sturm_positive([80, 144, -188, -200, 307], (0, 1),
                       claim="p5_critical_quartic_no_roots"))

    def p5t(Fv, r):
        return (Fraction(3, 2) * Fv**3 + Fraction(9, 2) * Fv**2 * r - 9 * Fv**2
                - 3 * Fv * r**2 - 24 * Fv * r + 30 * Fv - 18 * r**3 + 54 * r - 36)

    run(identity_check(
        lambda Fv: p5t(Fv, Q1) * 2,
        lambda Fv: 3 * Fv * (1 - Fv) * (2 - Fv),
        degree_bound=3, n_vars=1, n_points=256,
        claim="p5_L1: p5~(F,1) = (3/2) F (1-F) (2-F)"))
    run(identity_check(
        lambda r: p5t(Q1, r) * 2,
        lambda r: 3 * (1 - r) * (12 * r**2 + 14 * r - 9),
        degree_bound=3, n_vars=1, n_points=256,
        claim="p5_L2: p5~(1,r) = (3/2)(1-r)(12r^2+14r-9)"))
    run(sturm_positive([-9, 14, 12], (Fraction(2, 3), 1), claim="p5_L2_factor: 12r^2+14r-9 > 0"))
    run(identity_check(
        lambda r: p5t(3 * (1 - r), r) * 2,
        lambda r: 9 * (1 - r) * (2 * r**2 - 3 * r + 3),
        degree_bound=3, n_vars=1, n_points=256,
        claim="p5_L3: p5~(3(1-r),r) = (9/2)(1-r)(2r^2-3r+3)"))
    run(sturm_positive([3, -3, 2], (Fraction(2, 3), 1), claim="p5_L3_factor: 2r^2-3r+3 > 0"))
    run(lattice_sign_check(p5t, [(0, 1), (Fraction(2, 3), 1)], sign=+1,
                           claim="p5_interior_lattice", resolution=lattice_resolution,
                           region=lambda Fv, r: 3 * (1 - r) <= Fv))

    # --- the zeroth-order sign of the cylinder-regime quantity ----------------------
    def P(X, Y):
        return (2 - 3 * X) * Y**2 + (2 * X**2 - 4 * X + 2) * Y - 2 * (X - 1) ** 2 * X

    run(identity_check(
        lambda X: P(X, X - X**2),
        lambda X: -3 * (X - 1) ** 2 * X**3,
        degree_bound=6, n_vars=1, n_points=256,
        claim="PA1_upper_boundary: P(X, X-X^2) = -3(X-1)^2 X^3"))
    run(identity_check(
        lambda X: P(X, Q0),
        lambda X: -2 * (X - 1) ** 2 * X,
        degree_bound=3, n_vars=1, claim="PA1_lower_boundary: P(X,0) = -2(X-1)^2 X"))
    run(sturm_positive([2, -3], (0, Fraction(2, 3)), strict=False,
                       claim="PA1_convexity_coeff: 2-3X >= 0 on [0,2/3]"))
    run(identity_check(
        lambda X: -6 * X**2 + 8 * X - 2,
        lambda X: -2 * (3 * X - 1) * (X - 1),
        degree_bound=2, n_vars=1, claim="PA1_dXP_at_Y0_factorization"))
    run(sturm_positive([-2, 8, -6], (Fraction(2, 3), Fraction(99, 100)),
                       claim="PA1_dXP_at_Y0 > 0 inside [2/3, 1)"))
    run(identity_check(
        lambda X: (-6 * X**2 + 8 * X - 2 + (4 * X - 4) * (X - X**2)
                   - 3 * (X - X**2) ** 2),
        lambda X: (1 - X) * (3 * X**3 + X**2 + 2 * X - 2),
        degree_bound=4, n_vars=1, claim="PA1_dXP_on_upper_boundary_factorization"))
    run(sturm_positive([-2, 2, 1, 3], (Fraction(2, 3), 1),
                       claim="PA1_factor: 3X^3+X^2+2X-2 > 0 on [2/3,1]"))
    run(lattice_sign_check(P, [(0, 1), (0, 1)], sign=-1, claim="PA1_interior_lattice",
                           resolution=lattice_resolution,
                           region=lambda X, Y: Q0 <= Y and Y < X - X**2))

    return reports
