"""Dynamic beamwidth selection under a misalignment-probability constraint.

The predicted state uncertainty is propagated to the pointing angles,
then to the array's spatial frequencies, where the main lobe of an
M x N subarray is (to first order) the region
``A * psi_par^2 + B * psi_perp^2 <= 1`` with 3 dB half-widths
``k0 / N`` and ``k0 / M``.  The largest subarray whose main lobe covers
the Gamma-confidence ellipse of the spatial-frequency error is selected.

The row spatial frequency is ``u = sin(phi) cos(theta)`` and the column
one is ``v = sin(phi) sin(theta)``; their differentials with respect to
(theta, phi) define the covariance transform.  The axis-aligned covering
ellipse is the exact minimal-area one, obtained from the inverse of the
scaled covariance; a sampled containment check with a conservative
bounding-box fallback guards the degenerate corners.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import RsuConfig
from .errors import GammaOutOfRange, NonPsdCovariance
from .road import CcsPoint, RoadGeometry, ccs_to_polar, geometry_jacobian

__all__ = [
    "K0_3DB",
    "AngleUncertainty",
    "SpatialFreqUncertainty",
    "BeamPlan",
    "angle_covariance",
    "spatial_freq_covariance",
    "radius_for_gamma",
    "covering_ellipse",
    "best_array_size",
    "plan_beam",
    "dirichlet_halfpower_halfwidth",
]

#: Half-power half-width constant of the uniform linear pattern,
#: k0 / count in spatial-frequency units (0.886, often rounded to 0.89).
K0_3DB = 0.886

_BOUNDARY_SAMPLES = 720


@dataclass(frozen=True)
class AngleUncertainty:
    """2x2 covariance of the predicted (theta, phi) pointing error."""

    sigma: np.ndarray


@dataclass(frozen=True)
class SpatialFreqUncertainty:
    """2x2 covariance of the spatial-frequency error (psi_par, psi_perp)."""

    sigma_tilde: np.ndarray


@dataclass(frozen=True)
class BeamPlan:
    best_n: int
    best_m: int
    r0: float
    a_theta: float
    b_phi: float
    predicted_misalignment: float


def angle_covariance(m_pred: np.ndarray, geom_jac: np.ndarray) -> AngleUncertainty:
    """Propagate the position block of the predicted MSE to angle space.

    Only the (s, n) block feeds the pointing uncertainty; velocity and
    amplitude errors do not move the beam within an epoch.
    """
    j = np.asarray(geom_jac, float)
    pos = np.asarray(m_pred, float)[:2, :2]
    sigma = j @ pos @ j.T
    return AngleUncertainty(sigma=0.5 * (sigma + sigma.T))


def spatial_freq_covariance(
    sigma: AngleUncertainty, theta: float, phi: float, printed: bool = False
) -> SpatialFreqUncertainty:
    """Map angle uncertainty onto the array's spatial frequencies.

    Rows of the transform are the differentials of u = sin(phi)cos(theta)
    and v = sin(phi)sin(theta).  ``printed`` selects a legacy variant of
    the second row with the theta/phi factors interchanged; it is kept
    for comparison only and is inconsistent with the pattern geometry.
    """
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    if printed:
        t_mat = np.array([[-st * sp, ct * cp], [st * cp, ct * sp]])
    else:
        t_mat = np.array([[-st * sp, ct * cp], [ct * sp, st * cp]])
    out = t_mat @ sigma.sigma @ t_mat.T
    return SpatialFreqUncertainty(sigma_tilde=0.5 * (out + out.T))


def radius_for_gamma(gamma: float) -> float:
    """Radius scale covering probability 1 - gamma of a whitened Gaussian.

    Inverts the Rayleigh CDF 1 - exp(-r^2 / 2).
    """
    if not 0.0 < gamma < 1.0:
        raise GammaOutOfRange(f"gamma={gamma} outside (0, 1)")
    return float(np.sqrt(-2.0 * np.log(gamma)))


def _check_psd_2x2(m: np.ndarray) -> None:
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    scale = max(tr, 1e-300)
    if m[0, 0] < -1e-15 * scale or m[1, 1] < -1e-15 * scale or det < -1e-15 * scale**2:
        raise NonPsdCovariance("spatial-frequency covariance is not PSD")


def covering_ellipse(
    sigma_tilde: SpatialFreqUncertainty, r0: float, printed_axis: bool = False
) -> tuple[float, float]:
    """Axis-aligned ellipse A psi_par^2 + B psi_perp^2 <= 1 containing the
    r0-confidence ellipse of the spatial-frequency error.

    Uses the minimal-area covering of the scaled inverse covariance
    P = (sigma_tilde r0^2)^{-1}:
    A = P11 - |P12| sqrt(P11/P22), B symmetric.  Containment is verified
    on a dense boundary sampling; on failure the conservative ellipse
    through the bounding-box corners (semi-axes sqrt(2) r0 sigma_k) is
    used instead.
    """
    st = np.asarray(sigma_tilde.sigma_tilde, float)
    _check_psd_2x2(st)
    scaled = st * (r0 * r0)
    # tiny diagonal floor: a degenerate direction must not block inversion
    floor = 1e-30
    c11 = max(scaled[0, 0], floor)
    c22 = max(scaled[1, 1], floor)
    c12 = scaled[0, 1]
    det = c11 * c22 - c12 * c12
    det = max(det, floor * max(c11, c22))
    p11 = c22 / det
    p22 = c11 / det
    p12 = -c12 / det

    cross = abs(p12)
    a = p11 - cross * np.sqrt(p11 / p22) * (0.5 if printed_axis else 1.0)
    b = p22 - cross * np.sqrt(p22 / p11) * (0.5 if printed_axis else 1.0)
    a = max(a, 0.0)
    b = max(b, 0.0)

    if not _contains_confidence_boundary(scaled, a, b):
        a = 1.0 / (2.0 * c11)
        b = 1.0 / (2.0 * c22)
    return float(a), float(b)


def _contains_confidence_boundary(scaled_cov: np.ndarray, a: float, b: float) -> bool:
    w, v = np.linalg.eigh(scaled_cov)
    root = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
    ang = np.linspace(0.0, 2.0 * np.pi, _BOUNDARY_SAMPLES, endpoint=False)
    pts = root @ np.vstack([np.cos(ang), np.sin(ang)])
    vals = a * pts[0] ** 2 + b * pts[1] ** 2
    return bool(np.all(vals <= 1.0 + 1e-9))


def best_array_size(
    a_theta: float,
    b_phi: float,
    physical_m: int,
    physical_n: int,
    k0: float = K0_3DB,
    r0: float = float("nan"),
    sigma_tilde: SpatialFreqUncertainty | None = None,
) -> BeamPlan:
    """Largest subarray whose k0/count half-widths cover the ellipse.

    The row count limits the psi_par half-width (k0/N >= sqrt(1/A)) and
    the column count the psi_perp one, so N* = floor(k0 sqrt(A)) and
    M* = floor(k0 sqrt(B)), clamped to the physical array and at least 1.
    """
    # a degenerate (zero) parameter means the required width is unbounded
    n_star = int(np.floor(k0 * np.sqrt(a_theta))) if a_theta > 0 else 1
    m_star = int(np.floor(k0 * np.sqrt(b_phi))) if b_phi > 0 else 1
    n_star = min(max(n_star, 1), physical_n)
    m_star = min(max(m_star, 1), physical_m)

    miss = 0.0
    if sigma_tilde is not None:
        miss = _predicted_misalignment(sigma_tilde.sigma_tilde, n_star, m_star, k0)
    return BeamPlan(
        best_n=n_star,
        best_m=m_star,
        r0=float(r0),
        a_theta=float(a_theta),
        b_phi=float(b_phi),
        predicted_misalignment=miss,
    )


def _predicted_misalignment(st: np.ndarray, n_star: int, m_star: int, k0: float) -> float:
    """Tail mass outside the largest confidence ellipse inscribed in the
    selected beam's first-order main lobe."""
    d_mat = np.diag([(n_star / k0) ** 2, (m_star / k0) ** 2])
    w, v = np.linalg.eigh(st)
    root = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
    lam_max = float(np.linalg.eigvalsh(root.T @ d_mat @ root).max())
    if lam_max <= 0.0:
        return 0.0
    return float(np.exp(-0.5 / lam_max))


def plan_beam(
    m_pred: np.ndarray,
    predicted: "VehicleState",
    road: RoadGeometry,
    rsu: RsuConfig,
    gamma: float,
    k0: float = K0_3DB,
    printed_t_sigma: bool = False,
    printed_axis: bool = False,
) -> BeamPlan:
    """Select the subarray size for one epoch from the predicted MSE."""
    p = CcsPoint(predicted.s, predicted.n)
    view = ccs_to_polar(road, p, rsu.x0, rsu.y0, rsu.height_h)
    jac = geometry_jacobian(road, p, rsu.x0, rsu.y0, rsu.height_h)
    sigma = angle_covariance(m_pred, jac.j)
    sigma_tilde = spatial_freq_covariance(sigma, view.theta, view.phi, printed=printed_t_sigma)
    r0 = radius_for_gamma(gamma)
    a, b = covering_ellipse(sigma_tilde, r0, printed_axis=printed_axis)
    return best_array_size(
        a, b, rsu.cols_m, rsu.rows_n, k0=k0, r0=r0, sigma_tilde=sigma_tilde
    )


def dirichlet_halfpower_halfwidth(count: int) -> float:
    """Exact half-power half-width (in spatial frequency) of the
    count-element uniform pattern, found by bisection on the kernel."""
    if count <= 1:
        return 2.0  # single element radiates isotropically over |psi| < 2

    def power_ratio(psi: float) -> float:
        x = 0.5 * np.pi * psi
        den = np.sin(x)
        if abs(den) < 1e-15:
            return 1.0
        return (np.sin(count * x) / (count * den)) ** 2

    lo, hi = 0.0, 2.0 / count  # first null of the kernel
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if power_ratio(mid) >= 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
