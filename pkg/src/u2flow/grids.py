"""Radial grids, finite-difference stencils and the discrete metric state.

The metric lives on a fixed radial grid xi_0 = 0 < xi_1 < ... < xi_N. The
warping functions (u, a, b) are sampled at the nodes. Two geometries are
supported:

* ``bundle`` -- the full line bundle with its tip two-sphere at xi = 0. The
  fields carry definite parity across the tip (a odd, b and u even), which the
  tip stencils enforce through mirrored ghost nodes.
* ``segment`` -- a pure principal-orbit segment (cylinder or cone truncations)
  with no tip. Both ends are treated like outer boundaries.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

Parity = Literal["even", "odd"]
Geometry = Literal["bundle", "segment"]

ODD = "odd"
EVEN = "even"

#: minimum admissible node count (intervals)
MIN_INTERVALS = 16

#: admissible range for the ratio of adjacent grid spacings
SPACING_RATIO_BOUNDS = (0.5, 2.0)


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GradingSpec:
    """Grid grading descriptor.

    ``uniform`` spaces nodes equally; ``geometric`` grows the spacing by
    ``ratio`` per interval away from xi = 0, which concentrates resolution
    near the tip for ratio > 1.
    """

    kind: Literal["uniform", "geometric"] = "uniform"
    ratio: float = 1.0

    def describe(self) -> str:
        if self.kind == "uniform":
            return "uniform"
        return f"geometric:{self.ratio!r}"

    @staticmethod
    def parse(text: str) -> "GradingSpec":
        text = text.strip()
        if text == "uniform":
            return GradingSpec("uniform")
        if text.startswith("geometric:"):
            return GradingSpec("geometric", float(text.split(":", 1)[1]))
        raise GridError(f"unknown grading descriptor {text!r}")


@dataclass(frozen=True)
class RadialGrid:
    """Strictly increasing radial nodes with xi_0 = 0."""

    nodes: np.ndarray
    grading: GradingSpec = field(default_factory=GradingSpec)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        self.validate()

    def validate(self):
        xi = self.nodes
        if xi.ndim != 1 or xi.size < MIN_INTERVALS + 1:
            raise GridError(f"grid needs at least {MIN_INTERVALS} intervals, got {xi.size - 1}")
        if xi[0] != 0.0:
            raise GridError("grid must start at xi = 0")
        h = np.diff(xi)
        if np.any(h <= 0):
            raise GridError("grid nodes must be strictly increasing")
        r = h[1:] / h[:-1]
        lo, hi = SPACING_RATIO_BOUNDS
        if r.size and (r.min() < lo or r.max() > hi):
            raise GridError(
                f"adjacent spacing ratio outside [{lo}, {hi}]: range [{r.min():.4g}, {r.max():.4g}]"
            )

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def xi_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    def min_spacing(self) -> float:
        return float(self.spacings.min())


def build_grid(xi_max: float, n: int, grading: GradingSpec | str | None = None) -> RadialGrid:
    """Build a radial grid on [0, xi_max] with ``n`` intervals.

    Geometric grading with ratio > 1 makes the spacing grow away from the
    tip (finest resolution at xi = 0). Ratios outside the admissible
    adjacent-spacing range are rejected.
    """
    if isinstance(grading, str):
        grading = GradingSpec.parse(grading)
    grading = grading or GradingSpec()
    if xi_max <= 0:
        raise GridError("xi_max must be positive")
    if n < MIN_INTERVALS:
        raise GridError(f"need at least {MIN_INTERVALS} intervals, got {n}")
    if grading.kind == "uniform" or grading.ratio == 1.0:
        nodes = np.linspace(0.0, xi_max, n + 1)
        return RadialGrid(nodes, GradingSpec("uniform"))
    lo, hi = SPACING_RATIO_BOUNDS
    if not (lo <= grading.ratio <= hi):
        raise GridError(f"grading ratio {grading.ratio} outside [{lo}, {hi}]")
    r = grading.ratio
    # first spacing chosen so the spacings h0 * r^j sum to xi_max
    h0 = xi_max * (r - 1.0) / (r**n - 1.0)
    nodes = np.concatenate([[0.0], h0 * np.cumsum(r ** np.arange(n))])
    nodes[-1] = xi_max
    return RadialGrid(nodes, grading)


def fd_weights(x: np.ndarray, x0: float, m: int) -> np.ndarray:
    """Finite-difference weights on arbitrary nodes (Fornberg's recursion).

    Returns an array c of shape (len(x), m+1); c[:, k] are the weights of the
    k-th derivative at x0. Exact for polynomials of degree < len(x).
    """
    n = len(x)
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


class DiffOps:
    """Grading-aware stencils in xi on a fixed grid.

    The three-point path (order 2, exact on quadratics) serves the flow; a
    five-point path (order 4) serves diagnostics, where the sign of a
    near-zero margin must not be swamped by truncation error. The node at
    xi = 0 uses mirrored ghost nodes whose sign is set by the field parity;
    boundary nodes without parity use one-sided stencils of matching width or
    a ghost pinned to a prescribed first-derivative value.
    """

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        xi = grid.nodes
        hm = xi[1:-1] - xi[:-2]
        hp = xi[2:] - xi[1:-1]
        denom = hm * hp * (hm + hp)
        # first derivative weights (left, center, right)
        self._d1 = (
            -hp**2 / denom,
            (hp**2 - hm**2) / denom,
            hm**2 / denom,
        )
        # second derivative weights
        self._d2 = (
            2.0 * hp / denom,
            -2.0 * (hm + hp) / denom,
            2.0 * hm / denom,
        )
        self._h_first = xi[1] - xi[0]
        self._h_last = xi[-1] - xi[-2]
        self._h_last2 = xi[-2] - xi[-3]
        local = np.empty(xi.size)
        h = np.diff(xi)
        local[0] = h[0]
        local[-1] = h[-1]
        local[1:-1] = np.minimum(h[:-1], h[1:])
        local.flags.writeable = False
        #: per-node local spacing, min of the adjacent intervals
        self.local_spacing = local
        self._tables: dict[tuple[int, bool], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._tip_fit: Optional[tuple] = None

    def fd_tables(self, acc: int, with_tip_ghosts: bool):
        """Index/weight tables of the (acc+1)-point stencils (cached).

        With tip ghosts the grid is extended by acc/2 mirrored nodes across
        xi = 0, so every node gets a centered window; without ghosts the
        windows clip to one-sided at both ends.
        """
        key = (acc, with_tip_ghosts)
        tab = self._tables.get(key)
        if tab is not None:
            return tab
        xi = self.grid.nodes
        n = xi.size
        g = acc // 2
        width = acc + 1
        if with_tip_ghosts:
            xe = np.concatenate([-xi[g:0:-1], xi])
            offset = g
        else:
            xe = xi
            offset = 0
        starts = np.clip(np.arange(n) + offset - g, 0, xe.size - width)
        w1 = np.empty((n, width))
        w2 = np.empty((n, width))
        for j in range(n):
            c = fd_weights(xe[starts[j]:starts[j] + width], xi[j], 2)
            w1[j] = c[:, 1]
            w2[j] = c[:, 2]
        idx = starts[:, None] + np.arange(width)[None, :]
        tab = (idx, w1, w2)
        self._tables[key] = tab
        return tab

    def extend(self, f: np.ndarray, parity: Parity, acc: int) -> np.ndarray:
        g = acc // 2
        sign = 1.0 if parity == EVEN else -1.0
        return np.concatenate([sign * f[g:0:-1], f])

    def d_xi_n(self, f: np.ndarray, parity: Optional[Parity], order: int = 1,
               acc: int = 4) -> np.ndarray:
        """High-order derivative; parity=None uses one-sided ends."""
        f = np.asarray(f, dtype=float)
        if parity is None:
            idx, w1, w2 = self.fd_tables(acc, False)
            fe = f
        else:
            idx, w1, w2 = self.fd_tables(acc, True)
            fe = self.extend(f, parity, acc)
        w = w1 if order == 1 else w2
        return np.einsum("jm,jm->j", w, fe[idx])

    # kept under the original name used throughout the diagnostics
    def d_xi4(self, f: np.ndarray, parity: Optional[Parity], order: int = 1) -> np.ndarray:
        return self.d_xi_n(f, parity, order, acc=4)

    def tip_fit_matrix(self, n_fit: int = 4):
        """Inverse Vandermonde for odd/even polynomial fits at the tip.

        The odd fit interpolates nodes 1..n_fit with c1 z + c3 z^3 + ...,
        the even fit nodes 0..n_fit-1 with d0 + d2 z^2 + ..., where
        z = xi/xi_scale. Returns (xi_scale, z_odd, Minv_odd, z_even, Minv_even).
        """
        if self._tip_fit is not None:
            return self._tip_fit
        xi = self.grid.nodes
        scale = xi[n_fit]
        z_odd = xi[1:n_fit + 1] / scale
        z_even = xi[0:n_fit] / scale
        M_odd = np.stack([z_odd ** (2 * m + 1) for m in range(n_fit)], axis=1)
        M_even = np.stack([z_even ** (2 * m) for m in range(n_fit)], axis=1)
        self._tip_fit = (scale, z_odd, np.linalg.inv(M_odd), z_even, np.linalg.inv(M_even))
        return self._tip_fit

    def _edge_one_sided(self, f: np.ndarray, last: bool) -> tuple[float, float]:
        """(d1, d2) at an end node from the three nearest nodes."""
        if last:
            f0, f1, f2 = f[-3], f[-2], f[-1]
            h1, h2 = self._h_last2, self._h_last
        else:
            f0, f1, f2 = f[2], f[1], f[0]
            h1 = self.grid.nodes[2] - self.grid.nodes[1]
            h2 = self._h_first
        d1 = f0 * h2 / (h1 * (h1 + h2)) - f1 * (h1 + h2) / (h1 * h2) + f2 * (h1 + 2 * h2) / (
            h2 * (h1 + h2)
        )
        d2 = 2.0 * (f0 * h2 - f1 * (h1 + h2) + f2 * h1) / (h1 * h2 * (h1 + h2))
        if not last:
            d1 = -d1
        return d1, d2

    def d_xi(
        self,
        f: np.ndarray,
        parity: Optional[Parity] = EVEN,
        order: int = 1,
        inner_slope: Optional[float] = None,
        outer_slope: Optional[float] = None,
    ) -> np.ndarray:
        """First or second xi-derivative of a sampled field.

        ``parity`` controls the tip ghost (ignored when ``inner_slope`` is
        given, which switches the inner end to a pinned-slope ghost as used in
        segment geometry). ``outer_slope`` pins the outer ghost slope; when
        None the outer node uses a one-sided stencil.
        """
        f = np.asarray(f, dtype=float)
        out = np.empty_like(f)
        wl, wc, wr = self._d1 if order == 1 else self._d2
        out[1:-1] = wl * f[:-2] + wc * f[1:-1] + wr * f[2:]

        h0 = self._h_first
        if inner_slope is not None:
            ghost = f[0] - h0 * inner_slope
            if order == 1:
                out[0] = (f[1] - ghost) / (2.0 * h0)
            else:
                out[0] = (ghost - 2.0 * f[0] + f[1]) / h0**2
        elif parity is None:
            d1, d2 = self._edge_one_sided(f, last=False)
            out[0] = d1 if order == 1 else d2
        else:
            sign = 1.0 if parity == EVEN else -1.0
            ghost = sign * f[1]
            if order == 1:
                out[0] = (f[1] - ghost) / (2.0 * h0)
            else:
                out[0] = (ghost - 2.0 * f[0] + f[1]) / h0**2

        hN = self._h_last
        if outer_slope is not None:
            ghost = f[-1] + hN * outer_slope
            if order == 1:
                out[-1] = (ghost - f[-2]) / (2.0 * hN)
            else:
                out[-1] = (f[-2] - 2.0 * f[-1] + ghost) / hN**2
        else:
            d1, d2 = self._edge_one_sided(f, last=True)
            out[-1] = d1 if order == 1 else d2
        return out


@dataclass(frozen=True)
class MetricState:
    """Snapshot of the metric: warping functions on a radial grid at one time.

    ``k`` is the twisting number of the bundle; the smooth closure of the
    metric at the tip requires the radial derivative of ``a`` to approach
    ``k`` there (checked by :meth:`validate`).
    """

    grid: RadialGrid
    u: np.ndarray
    a: np.ndarray
    b: np.ndarray
    t: float = 0.0
    k: int = 2
    geometry: Geometry = "bundle"

    def __post_init__(self):
        for name in ("u", "a", "b"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    # -- invariants ---------------------------------------------------------

    def validate(self, tip_tol: float = 0.05) -> None:
        n = self.grid.n_nodes
        for name in ("u", "a", "b"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(self.u <= 0):
            raise ValueError("u must be positive")
        if np.any(self.b <= 0):
            raise ValueError("b must be positive")
        if self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.geometry == "bundle":
            if self.a[0] != 0.0:
                raise ValueError("a(0) must vanish at the tip")
            if np.any(self.a[1:] <= 0):
                raise ValueError("a must be positive away from the tip")
            a_s0 = self.tip_slope_a()
            if abs(a_s0 - self.k) > tip_tol * max(1.0, self.k):
                raise ValueError(
                    f"one-sided slope of a at the tip is {a_s0:.6g}, expected k = {self.k}"
                )
        else:
            if np.any(self.a <= 0):
                raise ValueError("a must be positive on a segment")

    def tip_slope_a(self) -> float:
        """Discrete one-sided s-derivative of a at the tip.

        Fits the odd cubic c1 xi + c3 xi^3 through the first two interior
        nodes, so the estimate is accurate to O(h^4) on smooth data.
        """
        xi1, xi2 = self.grid.nodes[1], self.grid.nodes[2]
        a1, a2 = self.a[1], self.a[2]
        c1 = (a1 * xi2**3 - a2 * xi1**3) / (xi1 * xi2 * (xi2**2 - xi1**2))
        return float(c1 / self.u[0])

    # -- helpers ------------------------------------------------------------

    @property
    def ops(self) -> DiffOps:
        ops = _OPS_CACHE.get(id(self.grid))
        if ops is None or ops.grid is not self.grid:
            ops = DiffOps(self.grid)
            _OPS_CACHE[id(self.grid)] = ops
        return ops

    def with_fields(self, u=None, a=None, b=None, t=None) -> "MetricState":
        return replace(
            self,
            u=self.u if u is None else u,
            a=self.a if a is None else a,
            b=self.b if b is None else b,
            t=self.t if t is None else t,
        )

    def scaled(self, lam: float) -> "MetricState":
        """Homothety (xi, a, b) -> (lam xi, lam a, lam b) with u unchanged."""
        grid = RadialGrid(self.grid.nodes * lam, self.grid.grading)
        return MetricState(grid, self.u.copy(), self.a * lam, self.b * lam,
                           t=self.t, k=self.k, geometry=self.geometry)


_OPS_CACHE: dict[int, DiffOps] = {}


# -- serialization ----------------------------------------------------------

FLOAT_FMT = "%.17g"


def format_float(x: float) -> str:
    return FLOAT_FMT % float(x)


def snapshot_to_csv(state: MetricState) -> str:
    """Columnar text of one snapshot: header xi,u,a,b then one row per node."""
    buf = io.StringIO()
    buf.write("xi,u,a,b\n")
    xi = state.grid.nodes
    for j in range(xi.size):
        buf.write(
            f"{format_float(xi[j])},{format_float(state.u[j])},"
            f"{format_float(state.a[j])},{format_float(state.b[j])}\n"
        )
    return buf.getvalue()


def snapshot_meta(state: MetricState) -> str:
    lines = [
        f"k = {state.k}",
        f"t = {format_float(state.t)}",
        f"geometry = {state.geometry}",
        f"grading = {state.grid.grading.describe()}",
        f"n_nodes = {state.grid.n_nodes}",
    ]
    return "\n".join(lines) + "\n"


def snapshot_from_csv(csv_text: str, meta_text: str) -> MetricState:
    meta: dict[str, str] = {}
    for line in meta_text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    rows = csv_text.strip().splitlines()
    header = rows[0].split(",")
    if header != ["xi", "u", "a", "b"]:
        raise ValueError(f"unexpected snapshot header {header!r}")
    data = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    grading = GradingSpec.parse(meta.get("grading", "uniform"))
    grid = RadialGrid(data[:, 0], grading)
    return MetricState(
        grid,
        u=data[:, 1],
        a=data[:, 2],
        b=data[:, 3],
        t=float(meta.get("t", "0")),
        k=int(meta.get("k", "2")),
        geometry=meta.get("geometry", "bundle"),  # type: ignore[arg-type]
    )
