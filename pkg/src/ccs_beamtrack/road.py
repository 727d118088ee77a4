"""Road centerline geometry in curvilinear coordinates.

A road is a cubic-spline centerline fitted through control points and
parametrized by true arc length ``s``.  A point on the road is addressed
by ``(s, n)`` where ``n`` is the signed lateral offset along the unit
normal ``(-sin(alpha), cos(alpha))`` and ``alpha`` is the tangent angle
at ``(s, 0)``.  Driving in the direction of increasing ``s``, positive
``n`` is to the left of travel.

Splines are fitted over a chord-length parameter and stored per segment
as cubics in a normalized parameter ``rho`` on [0, 1].  Arc length is
computed by composite Gauss-Legendre quadrature of the parametric speed,
not from the fitted cubic, so that ``v_s`` keeps exact m/s semantics on
curved segments.

Open roads use the natural boundary condition (zero second derivative at
both ends).  If the first and last control points coincide the road is
treated as closed: the spline is periodic and ``s`` wraps modulo the
total length.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateSegment, OffRoad, OutOfRange, SingularGeometry, TooFewPoints

__all__ = [
    "ControlPoint",
    "SplineSegment",
    "RoadGeometry",
    "CcsPoint",
    "CartesianPoint",
    "PolarView",
    "GeometryJacobian",
    "fit_spline",
    "load_road",
    "ccs_to_cartesian",
    "cartesian_to_ccs",
    "ccs_to_polar",
    "tangent_and_curvature",
    "geometry_jacobian",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)

#: Coincidence tolerance for consecutive control points, metres.
_COINCIDENT_TOL = 1e-9

#: Quadrature refinement target (relative) for per-segment arc length.
_ARC_REL_TOL = 1e-9

DEFAULT_LANE_HALF_WIDTH = 6.0


@dataclass(frozen=True)
class ControlPoint:
    x: float
    y: float


@dataclass(frozen=True)
class CcsPoint:
    """Curvilinear coordinates: arc length along centerline, lateral offset."""

    s: float
    n: float


@dataclass(frozen=True)
class CartesianPoint:
    x: float
    y: float


@dataclass(frozen=True)
class PolarView:
    """Sensor-side view of a road point from an elevated mast.

    ``theta`` is the azimuth of the mast-to-vehicle ray in (-pi, pi],
    ``phi`` the elevation measured so that sin(phi) = height / distance
    (phi in (0, pi/2] for a vehicle on the ground below the mast), ``d``
    the 3-D propagation distance and ``alpha`` the road tangent angle.
    """

    theta: float
    phi: float
    d: float
    alpha: float


@dataclass(frozen=True)
class SplineSegment:
    """One cubic piece of the centerline.

    ``a`` and ``b`` hold coefficients of x(rho) and y(rho), highest power
    first.  ``c`` is a cubic approximation of s(rho) kept for inspection
    and serialization; conversions use the exact quadrature tables held
    by the parent road instead.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    rho_domain: tuple[float, float]
    s_start: float


class RoadGeometry:
    """Fitted centerline with exact arc-length parametrization.

    Instances are immutable after construction and safe to share across
    workers.  Use :func:`fit_spline` to build one.
    """

    def __init__(self, ax, ay, seg_s0, seg_len, sub_rho, sub_s, lane_half_width, closed,
                 control_points=None):
        self._ax = ax              # (nseg, 4) x(rho) coefficients, highest first
        self._ay = ay              # (nseg, 4) y(rho)
        self._dax = ax[:, :3] * np.array([3.0, 2.0, 1.0])   # x'(rho)
        self._day = ay[:, :3] * np.array([3.0, 2.0, 1.0])
        self._ddax = self._dax[:, :2] * np.array([2.0, 1.0])  # x''(rho)
        self._dday = self._day[:, :2] * np.array([2.0, 1.0])
        self._seg_s0 = seg_s0      # (nseg,) arc length at segment starts
        self._seg_len = seg_len    # (nseg,) arc length spanned by each segment
        self._sub_rho = sub_rho    # (nseg, K+1) quadrature breakpoints in rho
        self._sub_s = sub_s        # (nseg, K+1) cumulative arc length at breakpoints
        self.lane_half_width = float(lane_half_width)
        self.closed = bool(closed)
        self.total_length = float(seg_s0[-1] + seg_len[-1])
        self.control_points = None if control_points is None else np.asarray(control_points, float)
        self._coarse = self._build_coarse_samples()

    # -- construction helpers -------------------------------------------------

    def _build_coarse_samples(self, per_seg: int = 24):
        nseg = self._ax.shape[0]
        rho = np.linspace(0.0, 1.0, per_seg)
        xs = np.empty((nseg, per_seg))
        ys = np.empty((nseg, per_seg))
        for i in range(nseg):
            xs[i] = np.polyval(self._ax[i], rho)
            ys[i] = np.polyval(self._ay[i], rho)
        seg_idx = np.repeat(np.arange(nseg), per_seg)
        return xs.ravel(), ys.ravel(), seg_idx

    # -- segment-level evaluation ---------------------------------------------

    @property
    def n_segments(self) -> int:
        return self._ax.shape[0]

    @property
    def segments(self) -> list[SplineSegment]:
        out = []
        for i in range(self.n_segments):
            # cubic fit of s(rho) through the quadrature table, anchored at s_start
            rho = self._sub_rho[i]
            ds = self._sub_s[i] - self._seg_s0[i]
            coeff, *_ = np.linalg.lstsq(
                np.stack([rho**3, rho**2, rho], axis=1), ds, rcond=None
            )
            c = np.array([coeff[0], coeff[1], coeff[2], self._seg_s0[i]])
            out.append(
                SplineSegment(
                    a=self._ax[i].copy(),
                    b=self._ay[i].copy(),
                    c=c,
                    rho_domain=(0.0, 1.0),
                    s_start=float(self._seg_s0[i]),
                )
            )
        return out

    def _xy(self, seg: int, rho: float) -> tuple[float, float]:
        ax = self._ax[seg]
        ay = self._ay[seg]
        x = ((ax[0] * rho + ax[1]) * rho + ax[2]) * rho + ax[3]
        y = ((ay[0] * rho + ay[1]) * rho + ay[2]) * rho + ay[3]
        return x, y

    def _dxy(self, seg: int, rho: float) -> tuple[float, float]:
        dax = self._dax[seg]
        day = self._day[seg]
        return (dax[0] * rho + dax[1]) * rho + dax[2], (day[0] * rho + day[1]) * rho + day[2]

    def _ddxy(self, seg: int, rho: float) -> tuple[float, float]:
        return (
            self._ddax[seg][0] * rho + self._ddax[seg][1],
            self._dday[seg][0] * rho + self._dday[seg][1],
        )

    def _speed(self, seg: int, rho) -> float:
        dax = self._dax[seg]
        day = self._day[seg]
        dx = (dax[0] * rho + dax[1]) * rho + dax[2]
        dy = (day[0] * rho + day[1]) * rho + day[2]
        return np.hypot(dx, dy)

    def _arc_partial(self, seg: int, rho_lo: float, rho_hi: float) -> float:
        """Arc length between two rho values on one segment (8-node GL)."""
        half = 0.5 * (rho_hi - rho_lo)
        mid = 0.5 * (rho_hi + rho_lo)
        nodes = mid + half * _GL_NODES
        return half * float(np.dot(_GL_WEIGHTS, self._speed(seg, nodes)))

    def _s_of_rho(self, seg: int, rho: float) -> float:
        grid = self._sub_rho[seg]
        j = int(np.searchsorted(grid, rho, side="right") - 1)
        j = min(max(j, 0), len(grid) - 2)
        return self._sub_s[seg][j] + self._arc_partial(seg, grid[j], rho)

    def _normalize_s(self, s: float) -> float:
        if self.closed:
            return float(np.mod(s, self.total_length))
        if s < -1e-9 or s > self.total_length + 1e-9:
            raise OutOfRange(
                f"s={s:.6f} m outside road [0, {self.total_length:.6f}]"
            )
        return min(max(s, 0.0), self.total_length)

    def _locate(self, s: float) -> tuple[int, float]:
        """Resolve arc length to (segment, rho), |ds| residual below 1e-12 m."""
        s = self._normalize_s(s)
        seg = int(np.searchsorted(self._seg_s0, s, side="right") - 1)
        seg = min(max(seg, 0), self.n_segments - 1)
        if s > self._seg_s0[seg] + self._seg_len[seg] and seg + 1 < self.n_segments:
            seg += 1
        grid_s = self._sub_s[seg]
        grid_rho = self._sub_rho[seg]
        j = int(np.searchsorted(grid_s, s, side="right") - 1)
        j = min(max(j, 0), len(grid_s) - 2)
        # linear seed inside the bracketing quadrature cell, then Newton
        span = grid_s[j + 1] - grid_s[j]
        frac = (s - grid_s[j]) / span if span > 0 else 0.0
        rho = grid_rho[j] + frac * (grid_rho[j + 1] - grid_rho[j])
        lo, hi = grid_rho[j], grid_rho[j + 1]
        for _ in range(30):
            err = self._s_of_rho(seg, rho) - s
            if abs(err) < 1e-12:
                break
            step = err / max(self._speed(seg, rho), 1e-30)
            rho_new = rho - step
            if not lo <= rho_new <= hi:  # bisect when Newton leaves the bracket
                if err > 0:
                    hi = rho
                else:
                    lo = rho
                rho_new = 0.5 * (lo + hi)
            rho = rho_new
        return seg, float(min(max(rho, 0.0), 1.0))

    def _tangent(self, seg: int, rho: float) -> tuple[float, float, float]:
        """Return (alpha, dalpha_ds, speed) at a segment-local position."""
        dx, dy = self._dxy(seg, rho)
        ddx, ddy = self._ddxy(seg, rho)
        speed_sq = dx * dx + dy * dy
        speed = np.sqrt(speed_sq)
        alpha = np.arctan2(dy, dx)
        dalpha_ds = (dx * ddy - dy * ddx) / (speed_sq * speed)
        return float(alpha), float(dalpha_ds), float(speed)


def fit_spline(points, lane_half_width: float = DEFAULT_LANE_HALF_WIDTH) -> RoadGeometry:
    """Fit the centerline through control points.

    Accepts a sequence of :class:`ControlPoint` or (x, y) pairs.  Raises
    :class:`TooFewPoints` / :class:`DegenerateSegment` on bad input.
    """
    pts = np.array(
        [(p.x, p.y) if isinstance(p, ControlPoint) else (p[0], p[1]) for p in points],
        dtype=float,
    )
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise TooFewPoints("need at least 3 control points")
    if not np.all(np.isfinite(pts)):
        raise DegenerateSegment("control points must be finite")
    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(chord <= _COINCIDENT_TOL):
        raise DegenerateSegment("consecutive control points coincide")

    closed = bool(np.linalg.norm(pts[-1] - pts[0]) <= _COINCIDENT_TOL)
    if closed:
        pts[-1] = pts[0]  # exact closure required by the periodic solver

    t = np.concatenate(([0.0], np.cumsum(chord)))
    bc = "periodic" if closed else "natural"
    sx = CubicSpline(t, pts[:, 0], bc_type=bc)
    sy = CubicSpline(t, pts[:, 1], bc_type=bc)

    nseg = len(t) - 1
    ax = np.empty((nseg, 4))
    ay = np.empty((nseg, 4))
    for i in range(nseg):
        dt = t[i + 1] - t[i]
        scale = dt ** np.array([3.0, 2.0, 1.0, 0.0])
        ax[i] = sx.c[:, i] * scale
        ay[i] = sy.c[:, i] * scale

    dax = ax[:, :3] * np.array([3.0, 2.0, 1.0])
    day = ay[:, :3] * np.array([3.0, 2.0, 1.0])

    # per-segment arc length by adaptive composite Gauss-Legendre
    sub_rho = []
    sub_s_local = []
    seg_len = np.empty(nseg)
    for i in range(nseg):
        k = 4
        prev = None
        while True:
            edges = np.linspace(0.0, 1.0, k + 1)
            parts = np.empty(k)
            for j in range(k):
                half = 0.5 * (edges[j + 1] - edges[j])
                mid = 0.5 * (edges[j + 1] + edges[j])
                nodes = mid + half * _GL_NODES
                dx = (dax[i][0] * nodes + dax[i][1]) * nodes + dax[i][2]
                dy = (day[i][0] * nodes + day[i][1]) * nodes + day[i][2]
                parts[j] = half * np.dot(_GL_WEIGHTS, np.hypot(dx, dy))
            total = parts.sum()
            if prev is not None and abs(total - prev) <= _ARC_REL_TOL * max(total, 1e-12):
                break
            if k >= 64:
                break
            prev = total
            k *= 2
        sub_rho.append(edges)
        sub_s_local.append(np.concatenate(([0.0], np.cumsum(parts))))
        seg_len[i] = total

    seg_s0 = np.concatenate(([0.0], np.cumsum(seg_len[:-1])))
    # pad subdivision tables to a rectangular array for fast indexing
    kmax = max(len(r) for r in sub_rho)
    rho_tab = np.empty((nseg, kmax))
    s_tab = np.empty((nseg, kmax))
    for i in range(nseg):
        r = sub_rho[i]
        sl = sub_s_local[i] + seg_s0[i]
        rho_tab[i] = np.pad(r, (0, kmax - len(r)), constant_values=r[-1])
        s_tab[i] = np.pad(sl, (0, kmax - len(sl)), constant_values=sl[-1])

    return RoadGeometry(
        ax, ay, seg_s0, seg_len, rho_tab, s_tab, lane_half_width, closed,
        control_points=pts,
    )


def load_road(source) -> RoadGeometry:
    """Load a road definition from a JSON file path or parsed dict."""
    if isinstance(source, dict):
        spec = source
    else:
        with open(source, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    return fit_spline(
        spec["control_points"],
        lane_half_width=spec.get("lane_half_width", DEFAULT_LANE_HALF_WIDTH),
    )


# ---------------------------------------------------------------------------
# coordinate conversions
# ---------------------------------------------------------------------------


def ccs_to_cartesian(road: RoadGeometry, p: CcsPoint) -> CartesianPoint:
    """Map (s, n) to the Cartesian plane via the centerline and its normal."""
    seg, rho = road._locate(p.s)
    x, y = road._xy(seg, rho)
    alpha, _, _ = road._tangent(seg, rho)
    return CartesianPoint(x - p.n * np.sin(alpha), y + p.n * np.cos(alpha))


def _project(road: RoadGeometry, qx: float, qy: float):
    """Nearest-centerline projection: returns (s, n, distance).

    Global minimum over all segments; stationary points are found as real
    roots of the quintic d/drho |r(rho) - q|^2 inside each candidate
    segment, which avoids iteration failures near inflection points.
    Ties are broken toward smaller s.
    """
    xs, ys, seg_of = road._coarse
    d2 = (xs - qx) ** 2 + (ys - qy) ** 2
    best_coarse = np.sqrt(d2.min())
    # any segment whose best sample is close to optimal could hold the minimum
    seg_best = np.full(road.n_segments, np.inf)
    np.minimum.at(seg_best, seg_of, np.sqrt(d2))
    slack = 2.0 * max(road._seg_len.max() / 23.0, 1e-6)
    candidates = np.nonzero(seg_best <= best_coarse + slack)[0]

    found = []
    for seg in candidates:
        px = road._ax[seg].copy()
        py = road._ay[seg].copy()
        px[3] -= qx
        py[3] -= qy
        dpx = road._dax[seg]
        dpy = road._day[seg]
        f = np.polyadd(np.polymul(px, dpx), np.polymul(py, dpy))
        roots = np.roots(f)
        cand = [0.0, 1.0]
        for r in roots:
            if abs(r.imag) < 1e-9 and -1e-12 <= r.real <= 1.0 + 1e-12:
                cand.append(float(min(max(r.real, 0.0), 1.0)))
        for rho in cand:
            x, y = road._xy(seg, rho)
            dist = np.hypot(x - qx, y - qy)
            found.append((dist, seg, rho))

    found.sort(key=lambda item: item[0])
    dist, seg, rho = found[0]
    # tie toward smaller s (closed roads meet themselves at the seam)
    s = road._s_of_rho(seg, rho)
    for other in found[1:]:
        if other[0] - dist > 1e-9:
            break
        s_other = road._s_of_rho(other[1], other[2])
        if s_other < s - 1e-12:
            seg, rho, s = other[1], other[2], s_other
    alpha, _, _ = road._tangent(seg, rho)
    x, y = road._xy(seg, rho)
    n = -(qx - x) * np.sin(alpha) + (qy - y) * np.cos(alpha)
    return float(s), float(n), float(dist)


def cartesian_to_ccs(road: RoadGeometry, q: CartesianPoint, strict: bool = True) -> CcsPoint:
    """Invert :func:`ccs_to_cartesian` by nearest-point projection.

    With ``strict`` (default) a projection farther than the lane
    half-width raises :class:`OffRoad`; metrics code passes
    ``strict=False`` to project arbitrary points.
    """
    s, n, dist = _project(road, q.x, q.y)
    if strict and dist > road.lane_half_width + 1e-6:
        raise OffRoad(
            f"point ({q.x:.3f}, {q.y:.3f}) is {dist:.3f} m from the centerline"
        )
    return CcsPoint(s, n)


def tangent_and_curvature(road: RoadGeometry, s: float) -> tuple[float, float]:
    """Tangent angle alpha and its arc-length derivative at (s, 0)."""
    seg, rho = road._locate(s)
    alpha, dalpha_ds, _ = road._tangent(seg, rho)
    return alpha, dalpha_ds


def ccs_to_polar(
    road: RoadGeometry, p: CcsPoint, rsu_x: float, rsu_y: float, rsu_h: float
) -> PolarView:
    """View a road point from a mast at (rsu_x, rsu_y) and height rsu_h."""
    g = _geom_eval(road, p.s, p.n, rsu_x, rsu_y, rsu_h)
    return PolarView(theta=g["theta"], phi=g["phi"], d=g["d"], alpha=g["alpha"])


@dataclass(frozen=True)
class GeometryJacobian:
    """Partials of the sensor view w.r.t. curvilinear position."""

    j: np.ndarray        # 2x2: rows (theta, phi), columns (s, n)
    dd_ds: float
    dd_dn: float


def geometry_jacobian(
    road: RoadGeometry, p: CcsPoint, rsu_x: float, rsu_y: float, rsu_h: float
) -> GeometryJacobian:
    g = _geom_eval(road, p.s, p.n, rsu_x, rsu_y, rsu_h)
    return GeometryJacobian(
        j=np.array(
            [[g["dtheta_ds"], g["dtheta_dn"]], [g["dphi_ds"], g["dphi_dn"]]]
        ),
        dd_ds=g["dd_ds"],
        dd_dn=g["dd_dn"],
    )


def _geom_eval(road, s, n, rsu_x, rsu_y, rsu_h):
    """All geometric quantities and first derivatives at one (s, n).

    Shared workhorse for the polar view, the geometry Jacobian and the
    tracker linearizations.  Derivatives follow the chain
    (s, n) -> (x, y) -> (theta, phi, d) with
    d(x, y)/ds = (1 - n*kappa) * tangent and d(x, y)/dn = normal.
    """
    seg, rho = road._locate(s)
    x0, y0 = road._xy(seg, rho)
    alpha, kappa, _ = road._tangent(seg, rho)
    sin_a = np.sin(alpha)
    cos_a = np.cos(alpha)
    x = x0 - n * sin_a
    y = y0 + n * cos_a

    dxv = x - rsu_x
    dyv = y - rsu_y
    rg = np.hypot(dxv, dyv)
    d = np.hypot(rg, rsu_h)
    if d < 1e-6 or rg < 1e-9:
        raise SingularGeometry("vehicle at the mast base; angles undefined")

    theta = np.arctan2(dyv, dxv)
    phi = np.arcsin(rsu_h / d)

    scale = 1.0 - n * kappa
    dx_ds = scale * cos_a
    dy_ds = scale * sin_a
    dx_dn = -sin_a
    dy_dn = cos_a

    inv_rg2 = 1.0 / (rg * rg)
    dtheta_dx = -dyv * inv_rg2
    dtheta_dy = dxv * inv_rg2
    drg_dx = dxv / rg
    drg_dy = dyv / rg

    dtheta_ds = dtheta_dx * dx_ds + dtheta_dy * dy_ds
    dtheta_dn = dtheta_dx * dx_dn + dtheta_dy * dy_dn
    drg_ds = drg_dx * dx_ds + drg_dy * dy_ds
    drg_dn = drg_dx * dx_dn + drg_dy * dy_dn
    dd_ds = (rg / d) * drg_ds
    dd_dn = (rg / d) * drg_dn
    dphi_factor = -rsu_h / (d * rg)
    dphi_ds = dphi_factor * dd_ds
    dphi_dn = dphi_factor * dd_dn

    return {
        "x": float(x),
        "y": float(y),
        "alpha": alpha,
        "kappa": kappa,
        "theta": float(theta),
        "phi": float(phi),
        "d": float(d),
        "rg": float(rg),
        "dtheta_ds": float(dtheta_ds),
        "dtheta_dn": float(dtheta_dn),
        "dphi_ds": float(dphi_ds),
        "dphi_dn": float(dphi_dn),
        "dd_ds": float(dd_ds),
        "dd_dn": float(dd_dn),
        "drg_ds": float(drg_ds),
        "drg_dn": float(drg_dn),
        "sin_phi": float(rsu_h / d),
        "cos_phi": float(rg / d),
    }
