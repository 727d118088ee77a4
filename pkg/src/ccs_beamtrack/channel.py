"""Planar-array channel model and CRLB-level measurement synthesis.

The transceiver is an M x N uniform planar array on an elevated mast.
Element ``m`` of the steering vector carries the phase
``-pi * (floor(m/M) * sin(phi) cos(theta) + (m mod M) * sin(phi) sin(theta))``,
so the row index advances the spatial frequency ``u = sin(phi) cos(theta)``
and the column index advances ``v = sin(phi) sin(theta)``.

Waveform-level estimation is out of scope: estimates of the measurement
vector (azimuth, elevation, Doppler, delay, reflection coefficient) are
synthesized as the noiseless values plus zero-mean Gaussian noise at the
Cramer-Rao floor implied by the realized beamforming gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAngle, NonPositiveDistance
from .road import RoadGeometry, _geom_eval

__all__ = [
    "C_LIGHT",
    "RsuConfig",
    "BeamConfig",
    "Observation",
    "MeasurementNoise",
    "steering_vector",
    "array_gain",
    "tx_gain",
    "rx_gain",
    "path_loss_db",
    "reflection_coefficient",
    "radar_snrs",
    "crlb_covariance",
    "noiseless_measurement",
    "synthesize_observation",
    "achievable_rate",
]

C_LIGHT = 2.998e8

_FOUR_PI_32 = (4.0 * np.pi) ** 1.5

#: Linear floor applied to beamforming gains before SNR computation so a
#: pattern null yields huge-but-finite measurement variances.
GAIN_FLOOR = 1e-9


@dataclass(frozen=True)
class RsuConfig:
    """Static transceiver parameters.

    Powers are linear watts; ``pathloss_eta`` = 1 corresponds to free
    space.  ``tau_printed`` switches the delay CRLB to the variant
    without the squared bandwidth (see :func:`crlb_covariance`).
    """

    x0: float
    y0: float
    height_h: float
    cols_m: int
    rows_n: int
    carrier_fc: float
    bandwidth_bw: float
    tx_power_p: float
    noise_var_sigma2: float
    sample_rate_fs: float
    n_sample: int
    epoch_dt: float
    pathloss_eta: float = 1.0
    tau_printed: bool = False

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.carrier_fc

    @property
    def n_elements(self) -> int:
        return self.cols_m * self.rows_n


@dataclass(frozen=True)
class BeamConfig:
    """Active subarray size and pointing direction for one epoch.

    The active block is the top-left ``active_n`` rows by ``active_m``
    columns of the physical array; because element phases depend only on
    the local row/column index, the block behaves exactly like a
    standalone ``active_m`` x ``active_n`` array.
    """

    active_m: int
    active_n: int
    point_theta: float
    point_phi: float


@dataclass(frozen=True)
class Observation:
    theta_hat: float
    phi_hat: float
    mu_hat: float
    tau_hat: float
    beta_hat: complex

    def as_vector(self) -> np.ndarray:
        """Real 6-vector (theta, phi, mu, tau, Re beta, Im beta)."""
        return np.array(
            [
                self.theta_hat,
                self.phi_hat,
                self.mu_hat,
                self.tau_hat,
                self.beta_hat.real,
                self.beta_hat.imag,
            ]
        )

    @staticmethod
    def from_vector(v) -> "Observation":
        return Observation(
            theta_hat=float(v[0]),
            phi_hat=float(v[1]),
            mu_hat=float(v[2]),
            tau_hat=float(v[3]),
            beta_hat=complex(v[4], v[5]),
        )


@dataclass(frozen=True)
class MeasurementNoise:
    """6x6 noise covariance over (theta, phi, mu, tau, Re beta, Im beta)."""

    q_m: np.ndarray

    @property
    def c_theta_phi(self) -> np.ndarray:
        return self.q_m[:2, :2]


def steering_vector(theta: float, phi: float, m_cols: int, n_rows: int) -> np.ndarray:
    """Unit-modulus steering vector of the m_cols x n_rows planar array."""
    m = np.arange(m_cols * n_rows)
    row = m // m_cols
    col = m - m_cols * row
    u = np.sin(phi) * np.cos(theta)
    v = np.sin(phi) * np.sin(theta)
    return np.exp(-1j * np.pi * (row * u + col * v))


def _dirichlet_mag(count: int, delta: float) -> float:
    """|sum_{k<count} exp(j pi k delta)| via the closed-form kernel."""
    x = 0.5 * np.pi * delta
    den = np.sin(x)
    if abs(den) < 1e-12:
        return float(count)
    return abs(np.sin(count * x) / den)


def array_gain(
    true_theta: float,
    true_phi: float,
    point_theta: float,
    point_phi: float,
    m_cols: int,
    n_rows: int,
) -> float:
    """Normalized conjugate-beamforming gain |a^H(true) a(point)| / sqrt(MN).

    Equals sqrt(MN) at perfect alignment and factorizes into two
    Dirichlet kernels over the spatial-frequency offsets.
    """
    du = np.sin(true_phi) * np.cos(true_theta) - np.sin(point_phi) * np.cos(point_theta)
    dv = np.sin(true_phi) * np.sin(true_theta) - np.sin(point_phi) * np.sin(point_theta)
    return (
        _dirichlet_mag(n_rows, du)
        * _dirichlet_mag(m_cols, dv)
        / np.sqrt(m_cols * n_rows)
    )


def tx_gain(true_theta: float, true_phi: float, beam: BeamConfig) -> float:
    """Transmit beamforming gain kappa_T <= sqrt(active elements)."""
    return array_gain(
        true_theta, true_phi, beam.point_theta, beam.point_phi, beam.active_m, beam.active_n
    )


def rx_gain(
    true_theta: float,
    true_phi: float,
    est_theta: float,
    est_phi: float,
    m_cols: int,
    n_rows: int,
) -> float:
    """Receive beamforming gain kappa_R <= sqrt(m_cols * n_rows)."""
    return array_gain(true_theta, true_phi, est_theta, est_phi, m_cols, n_rows)


def path_loss_db(d: float, fc: float, eta: float = 1.0) -> float:
    """One-way path loss: 32.4 + 20 log10(f/MHz) + 20 eta log10(d/km)."""
    if d <= 0:
        raise NonPositiveDistance(f"d={d}")
    return 32.4 + 20.0 * np.log10(fc / 1e6) + 20.0 * eta * np.log10(d / 1e3)


def reflection_coefficient(d: float, rcs_eps: complex, lam: float) -> complex:
    """Radar reflection coefficient lambda*eps / ((4 pi)^{3/2} d^2)."""
    if d <= 0:
        raise NonPositiveDistance(f"d={d}")
    return lam * rcs_eps / (_FOUR_PI_32 * d * d)


def radar_snrs(rsu: RsuConfig, beta: complex, kappa_t: float, kappa_r: float):
    """Per-antenna SNR rho0, beamformed SNR rho1 and matched-filter SNR chi."""
    b2 = abs(beta) ** 2
    rho0 = rsu.tx_power_p * b2 * kappa_t**2 / rsu.noise_var_sigma2
    rho1 = rho0 * kappa_r**2
    chi = rho1 * rsu.epoch_dt * rsu.bandwidth_bw
    return rho0, rho1, chi


def crlb_covariance(
    rsu: RsuConfig,
    rho0: float,
    rho1: float,
    chi: float,
    theta: float,
    phi: float,
    n_r: int | None = None,
) -> MeasurementNoise:
    """Measurement-noise covariance at the CRLB floor.

    The angle block transforms the spatial-frequency CRLBs
    C_a = C_b = 6 / (N_sample^2 N_r rho0) through the analytic Jacobian of
    (theta, phi) = (atan2(b, a), arcsin(sqrt(a^2+b^2)/pi)).  The delay
    bound defaults to 3 / (2 pi^2 B_w^2 chi); the dimensionally
    inconsistent variant without the square is available via
    ``rsu.tau_printed``.  The Doppler bound is 1 / ((2 pi)^2 dT^2 f_s chi).
    """
    if rho0 <= 0 or chi <= 0:
        raise ValueError("rho0 and chi must be positive")
    sin_phi = np.sin(phi)
    cos_phi = np.cos(phi)
    if abs(sin_phi) < 1e-6:
        raise DegenerateAngle(f"sin(phi)={sin_phi:.2e}; angle CRLB undefined")
    if abs(cos_phi) < 1e-9:
        raise DegenerateAngle(f"cos(phi)={cos_phi:.2e}; elevation CRLB undefined")

    if n_r is None:
        n_r = rsu.n_elements
    c_ab = 6.0 / (rsu.n_sample**2 * n_r * rho0)
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    jac = np.array(
        [
            [-sin_t / (np.pi * sin_phi), cos_t / (np.pi * sin_phi)],
            [cos_t / (np.pi * cos_phi), sin_t / (np.pi * cos_phi)],
        ]
    )
    c_angle = jac @ (c_ab * np.eye(2)) @ jac.T

    if rsu.tau_printed:
        c_tau = 3.0 / (2.0 * np.pi**2 * rsu.bandwidth_bw * chi)
    else:
        c_tau = 3.0 / (2.0 * np.pi**2 * rsu.bandwidth_bw**2 * chi)
    c_mu = 1.0 / ((2.0 * np.pi) ** 2 * rsu.epoch_dt**2 * rsu.sample_rate_fs * chi)
    c_beta = 1.0 / (rsu.n_sample * n_r * rho0)

    q = np.zeros((6, 6))
    q[:2, :2] = c_angle
    q[2, 2] = c_mu
    q[3, 3] = c_tau
    q[4, 4] = 0.5 * c_beta
    q[5, 5] = 0.5 * c_beta
    return MeasurementNoise(q_m=q)


def noiseless_measurement(truth, road: RoadGeometry, rsu: RsuConfig) -> np.ndarray:
    """Noiseless measurement h(X) = (theta, phi, mu, tau, Re beta, Im beta).

    ``truth`` is any object exposing s, n, v_s, v_n, beta_re, beta_im.
    Doppler uses the radial ground velocity
    v_R = v_s cos(theta - alpha) + v_n sin(theta - alpha) scaled by
    cos(phi) for the slant geometry.
    """
    g = _geom_eval(road, truth.s, truth.n, rsu.x0, rsu.y0, rsu.height_h)
    v_r = truth.v_s * np.cos(g["theta"] - g["alpha"]) + truth.v_n * np.sin(
        g["theta"] - g["alpha"]
    )
    mu = 2.0 * g["cos_phi"] * v_r / rsu.wavelength
    tau = 2.0 * g["d"] / C_LIGHT
    return np.array([g["theta"], g["phi"], mu, tau, truth.beta_re, truth.beta_im])


def synthesize_observation(
    truth,
    road: RoadGeometry,
    rsu: RsuConfig,
    beam: BeamConfig,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
) -> tuple[Observation, MeasurementNoise]:
    """Draw one epoch's noisy measurement and the covariance it obeys.

    Gains are realized against the true angles, so a misaligned beam
    inflates every CRLB through the reduced SNR.  The returned covariance
    is exactly the one the noise was drawn from (what a tracker should
    assume).  ``noise_scale`` scales the drawn noise only; 0 gives the
    noiseless h(X).
    """
    h = noiseless_measurement(truth, road, rsu)
    theta, phi = h[0], h[1]
    kappa_t = max(tx_gain(theta, phi, beam), GAIN_FLOOR)
    kappa_r = max(
        rx_gain(theta, phi, beam.point_theta, beam.point_phi, beam.active_m, beam.active_n),
        GAIN_FLOOR,
    )
    beta = complex(truth.beta_re, truth.beta_im)
    rho0, rho1, chi = radar_snrs(rsu, beta, kappa_t, kappa_r)
    noise = crlb_covariance(
        rsu, rho0, rho1, chi, theta, phi, n_r=beam.active_m * beam.active_n
    )

    q = noise.q_m
    # angle block via its 2x2 Cholesky factor, remaining entries independent
    c11, c12, c22 = q[0, 0], q[0, 1], q[1, 1]
    l11 = np.sqrt(c11)
    l21 = c12 / l11 if l11 > 0 else 0.0
    l22 = np.sqrt(max(c22 - l21 * l21, 0.0))
    z = rng.standard_normal(6)
    draw = np.array(
        [
            l11 * z[0],
            l21 * z[0] + l22 * z[1],
            np.sqrt(q[2, 2]) * z[2],
            np.sqrt(q[3, 3]) * z[3],
            np.sqrt(q[4, 4]) * z[4],
            np.sqrt(q[5, 5]) * z[5],
        ]
    )
    y = h + noise_scale * draw
    return Observation.from_vector(y), noise


def achievable_rate(rsu: RsuConfig, d: float, kappa_t: float) -> float:
    """Downlink spectral efficiency log2(1 + p g kappa_T^2 / sigma^2)."""
    if d <= 0:
        raise NonPositiveDistance(f"d={d}")
    g_lin = 10.0 ** (-path_loss_db(d, rsu.carrier_fc, rsu.pathloss_eta) / 10.0)
    snr = rsu.tx_power_p * g_lin * kappa_t**2 / rsu.noise_var_sigma2
    return float(np.log2(1.0 + snr))
