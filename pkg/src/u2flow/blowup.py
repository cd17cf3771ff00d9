"""Parabolic rescaling near the singularity and blow-up classification.

Profiles are rescaled by the cross-section size at a chosen center, so the
center carries b = 1 afterwards; all scale-invariant fields are copied from
the source state unchanged (same arithmetic). The classifier maps the
observed limits of b(p,t)/b(o,t) and b_s(p,t) over the final decade of
b(o,t) onto the four blow-up regimes; thresholds are documented heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import flow as flow_mod
from .geometry import derivatives, radial_distance, scale_invariants
from .grids import MetricState, format_float


class BlowupError(ValueError):
    pass


REGIME_EGUCHI_HANSON = "eguchi_hanson"
REGIME_FLAT_ORBIFOLD = "flat_orbifold"
REGIME_BRYANT_LIKE = "bryant_like"
REGIME_CYLINDER = "cylinder"
REGIME_UNDETERMINED = "undetermined"

#: bounded-ratio threshold for the Ricci-flat regime over the final decade
BOUNDED_RATIO = 20.0
#: ratio growth across the final decade that counts as divergence
DIVERGENCE_FACTOR = 2.0
#: stable band of b_s identifying the soliton-like regime
ETA_BAND = (0.1, 0.9)


@dataclass(frozen=True)
class RescaledProfile:
    """Profile in units of the cross-section size at the center."""

    center_kind: str          # 'tip' or 'node'
    center_index: int
    scale: float              # the curvature scale b(center)^-2
    s: np.ndarray             # arclength from the tip / b(center)
    a: np.ndarray
    b: np.ndarray
    x: np.ndarray
    y: np.ndarray
    Q: np.ndarray
    b_s: np.ndarray
    bbss: np.ndarray
    t: float

    def to_csv(self) -> str:
        lines = ["s,a,b,x,y,Q,b_s,bbss"]
        for j in range(self.s.size):
            lines.append(",".join(format_float(v) for v in (
                self.s[j], self.a[j], self.b[j], self.x[j], self.y[j],
                self.Q[j], self.b_s[j], self.bbss[j])))
        return "\n".join(lines) + "\n"


def rescale(state: MetricState, center: Union[int, str] = "tip") -> RescaledProfile:
    """Divide lengths by b at the center; scale-invariant fields unchanged."""
    if center == "tip":
        idx = 0
    else:
        idx = int(center)
        if not (0 <= idx < state.grid.n_nodes):
            raise BlowupError(f"center node {idx} outside the grid")
    lam = float(state.b[idx])
    if lam <= 0:
        raise BlowupError("cross-section size at the center must be positive")
    d = derivatives(state)
    s = radial_distance(state)
    q = scale_invariants(state, der=d)
    return RescaledProfile(
        center_kind="tip" if idx == 0 else "node",
        center_index=idx,
        scale=lam**-2,
        s=s / lam,
        a=state.a / lam,
        b=state.b / lam,
        x=q.x, y=q.y, Q=q.Q, b_s=q.b_s, bbss=q.bbss,
        t=state.t,
    )


def eh_distance(profile: RescaledProfile, window: tuple[float, float] = (0.0, 5.0)):
    """(sup|x|, sup|y|) over a rescaled-arclength window.

    Both vanish exactly on the Ricci-flat profile, so the pair measures the
    distance from it on the window.
    """
    lo, hi = window
    mask = (profile.s >= lo) & (profile.s <= hi)
    if not mask.any():
        raise BlowupError(f"window {window} contains no profile samples")
    return float(np.max(np.abs(profile.x[mask]))), float(np.max(np.abs(profile.y[mask])))


def pick_blowup_times(traj: flow_mod.Trajectory, n_times: int = 8) -> list[dict]:
    """Reference-time ladder with the maximizing sample times.

    For each reference time T_i approaching the singular time, t_i maximizes
    (T_i - t) / b(o,t)^2 over the stored samples; exact plateaus are broken
    to the earliest time.
    """
    if traj.stop_reason != "singularity" or traj.t_sing is None:
        raise BlowupError("trajectory did not stop on a singularity criterion")
    t = traj.times
    b = traj.b_tip
    if t.size < n_times + 2:
        raise BlowupError("too few stored samples for a blow-up ladder")
    t0 = t[0]
    out = []
    for i in range(1, n_times + 1):
        Ti = traj.t_sing - (traj.t_sing - t0) * 0.5**i
        mask = t < Ti
        if mask.sum() < 2:
            continue
        vals = (Ti - t[mask]) / b[mask] ** 2
        vmax = float(np.max(vals))
        j = int(np.argmax(vals >= vmax * (1.0 - 1e-12)))
        out.append({"T_i": float(Ti), "t_i": float(t[mask][j]), "indicator": vmax})
    return out


@dataclass
class TrackSpec:
    """How a tracked point is selected on each snapshot.

    kind 'node' follows a fixed grid node (a fixed manifold point while the
    grid is not regridded); 's_value' follows a fixed arclength from the
    tip; 'b_ratio' follows the innermost point where b = value * b(o);
    's_over_btip' follows s = value * b(o).
    """

    kind: str = "node"
    value: float = 0.0

    def locate(self, state: MetricState) -> int:
        if self.kind == "node":
            return int(self.value)
        s = radial_distance(state)
        if self.kind == "s_value":
            return int(np.argmin(np.abs(s - self.value)))
        if self.kind == "b_ratio":
            target = self.value * float(state.b[0])
            idx = np.where(state.b >= target)[0]
            return int(idx[0]) if idx.size else state.grid.n_nodes - 1
        if self.kind == "s_over_btip":
            return int(np.argmin(np.abs(s - self.value * float(state.b[0]))))
        raise BlowupError(f"unknown tracking kind {self.kind!r}")


@dataclass
class BlowupReport:
    regime: str
    ratio_series: list[float]
    b_s_series: list[float]
    times: list[float]
    eh_distance_series: list[dict] = field(default_factory=list)
    lemma_margins: Optional[dict] = None
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "times": self.times,
            "ratio_series": self.ratio_series,
            "b_s_series": self.b_s_series,
            "eh_distance_series": self.eh_distance_series,
            "lemma_margins": self.lemma_margins,
            "evidence": self.evidence,
        }


def _final_decade(snaps: list[MetricState]) -> list[MetricState]:
    b_end = float(snaps[-1].b[0])
    return [s for s in snaps if float(s.b[0]) <= 10.0 * b_end]


def classify(traj: flow_mod.Trajectory, tracked: Union[TrackSpec, int],
             eh_window: tuple[float, float] = (0.0, 5.0),
             region_C: float = 10.0, region_delta: float = 0.5) -> BlowupReport:
    """Blow-up regime of a tracked point sequence over the final decade.

    Bounded b(p)/b(o) maps to the Ricci-flat regime; a diverging ratio maps
    to the flat orbifold, the soliton-like regime or the cylinder according
    to the limit of b_s(p); anything non-convergent stays undetermined.
    """
    if isinstance(tracked, int):
        tracked = TrackSpec("node", tracked)
    snaps = _final_decade(traj.snapshots)
    if len(snaps) < 3:
        raise BlowupError("need at least 3 snapshots in the final decade of b(o,t)")
    times, ratios, slopes = [], [], []
    for st in snaps:
        j = tracked.locate(st)
        d = derivatives(st)
        times.append(st.t)
        ratios.append(float(st.b[j] / st.b[0]))
        slopes.append(float(d.b_s[j]))
    ratios_a = np.asarray(ratios)
    slopes_a = np.asarray(slopes)
    tail = slopes_a[-max(3, len(slopes) // 3):]

    evidence = {
        "ratio_max": float(ratios_a.max()),
        "ratio_growth": float(ratios_a[-1] / max(ratios_a[0], 1e-300)),
        "b_s_tail_min": float(tail.min()),
        "b_s_tail_max": float(tail.max()),
    }
    bounded = ratios_a.max() <= BOUNDED_RATIO
    divergent = evidence["ratio_growth"] >= DIVERGENCE_FACTOR

    if bounded and not divergent:
        regime = REGIME_EGUCHI_HANSON
    elif divergent:
        lo, hi = ETA_BAND
        if tail.min() >= hi:
            regime = REGIME_FLAT_ORBIFOLD
        elif tail.max() <= lo:
            regime = REGIME_CYLINDER
        elif tail.min() >= lo and tail.max() <= hi:
            regime = REGIME_BRYANT_LIKE
        else:
            regime = REGIME_UNDETERMINED
    else:
        regime = REGIME_UNDETERMINED

    report = BlowupReport(regime=regime, ratio_series=ratios, b_s_series=slopes,
                          times=times, evidence=evidence)

    if regime == REGIME_EGUCHI_HANSON:
        for st in snaps:
            prof = rescale(st, "tip")
            sx, sy = eh_distance(prof, eh_window)
            report.eh_distance_series.append(
                {"t": st.t, "b_tip": float(st.b[0]), "sup_x": sx, "sup_y": sy})
    else:
        report.lemma_margins = neck_region_margins(snaps[-1], region_C, region_delta)
    return report


def neck_region_margins(state: MetricState, C: float = 10.0, delta: float = 0.5) -> dict:
    """Margins of the intermediate-region inequalities on C b(o) <= b <= delta.

    Reports min Q, min T_F1, max T_F2 and max of the rate of b^2 over the
    region (all should be near the round/cylindrical values there).
    """
    q = scale_invariants(state)
    mask = (state.b >= C * float(state.b[0])) & (state.b <= delta)
    if not mask.any():
        return {"region_empty": True}
    du, da, db = flow_mod.rhs(state)
    dtb2 = 2.0 * state.b * db
    return {
        "region_empty": False,
        "n_nodes": int(mask.sum()),
        "min_Q": float(np.min(q.Q[mask])),
        "min_TF1": float(np.min(q.TF1[mask])),
        "max_TF2": float(np.max(q.TF2[mask])),
        "max_dt_b2": float(np.max(dtb2[mask])),
    }


def sandwich_check(profile: RescaledProfile) -> dict:
    """Margins of T_F1 >= 0, T_F2 <= 0 and the implied curvature sandwich.

    On high-curvature regions with round cross-sections the radial sectional
    curvature -b_ss/b is pinched between (1-b_s^2)(1-(1-b_s^2))/b^2 and
    (1-b_s^2)/b^2.
    """
    X = 1.0 - profile.b_s**2
    TF1 = profile.bbss + X
    TF2 = TF1 - X**2
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = X * (1.0 - X) / profile.b**2
        mid = -profile.bbss / profile.b**2
        upper = X / profile.b**2
    return {
        "TF1_margin": TF1,
        "TF2_margin": -TF2,
        "sandwich_lower_margin": mid - lower,
        "sandwich_upper_margin": upper - mid,
        "min_TF1": float(np.min(TF1)),
        "max_TF2": float(np.max(TF2)),
    }
