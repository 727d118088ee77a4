"""EKF and interacting-multiple-model tracking of the curvilinear state.

State vectors are packed as ``(s, n, v_s, v_n, Re beta, Im beta)``; the
complex reflection coefficient is carried as two real components so the
whole recursion stays real-valued.  Measurement vectors are packed as
``(theta, phi, mu, tau, Re beta, Im beta)`` matching
:func:`ccs_beamtrack.channel.noiseless_measurement`.

Two kinematic hypotheses are provided: lane keeping (LK) pins the
lateral velocity to zero with zero process noise on it, lane changing
(LC) carries it as a free state.  LK is realized as a constrained
six-state filter rather than a five-state one so that model mixing
operates in a single common state space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import chi2

from .channel import C_LIGHT, MeasurementNoise, Observation, RsuConfig, noiseless_measurement
from .errors import BadTransitionMatrix, SingularInnovation
from .road import RoadGeometry, _geom_eval

__all__ = [
    "VehicleState",
    "ModelKind",
    "ProcessNoise",
    "KinematicModel",
    "FilterState",
    "ImmBank",
    "process_noise_matrix",
    "evolve",
    "measure",
    "jacobian_g",
    "jacobian_h",
    "ekf_step",
    "imm_step",
    "initialize_bank",
    "nees",
]

log = logging.getLogger(__name__)

#: Packing order of state vectors (matrix row/column convention).
STATE_FIELDS = ("s", "n", "v_s", "v_n", "beta_re", "beta_im")

#: Condition-number threshold (on the correlation-normalized innovation
#: covariance) above which the scenario is declared mis-specified.
COND_LIMIT = 1e12

_DEFAULT_INIT_COV = np.diag([1.0, 0.25, 1.0, 0.04, 1e-10, 1e-10])


@dataclass(frozen=True)
class VehicleState:
    """Curvilinear kinematic and reflection state of the vehicle."""

    s: float
    v_s: float
    n: float
    v_n: float
    beta_re: float
    beta_im: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.s, self.n, self.v_s, self.v_n, self.beta_re, self.beta_im])

    @staticmethod
    def from_vector(v) -> "VehicleState":
        return VehicleState(
            s=float(v[0]), n=float(v[1]), v_s=float(v[2]),
            v_n=float(v[3]), beta_re=float(v[4]), beta_im=float(v[5]),
        )


class ModelKind(Enum):
    LK = "lk"
    LC = "lc"


@dataclass(frozen=True)
class ProcessNoise:
    q_s: np.ndarray


def process_noise_matrix(
    sigma_s: float,
    sigma_n: float,
    sigma_vs: float,
    sigma_vn: float,
    sigma_beta: float,
    rho_s_vs: float = 0.0,
    rho_n_vn: float = 0.0,
    kind: ModelKind = ModelKind.LC,
) -> ProcessNoise:
    """Per-epoch system-noise covariance in state packing order.

    The complex-amplitude noise variance is split evenly over the real
    and imaginary components.  The LK variant zeroes the lateral-velocity
    row and column.
    """
    q = np.zeros((6, 6))
    q[0, 0] = sigma_s**2
    q[1, 1] = sigma_n**2
    q[2, 2] = sigma_vs**2
    q[0, 2] = q[2, 0] = rho_s_vs * sigma_s * sigma_vs
    if kind is ModelKind.LC:
        q[3, 3] = sigma_vn**2
        q[1, 3] = q[3, 1] = rho_n_vn * sigma_n * sigma_vn
    q[4, 4] = 0.5 * sigma_beta**2
    q[5, 5] = 0.5 * sigma_beta**2
    return ProcessNoise(q_s=q)


@dataclass(frozen=True)
class KinematicModel:
    kind: ModelKind
    q_s: ProcessNoise


@dataclass(frozen=True)
class FilterState:
    """Posterior at the last processed epoch plus the prior for the next.

    ``x_pred``/``m_pred`` are the one-step prediction the beam for the
    next epoch is formed from; the update step consumes them as its
    prior, keeping beam pointing and filter linearization consistent.
    """

    x_hat: VehicleState
    m: np.ndarray
    x_pred: VehicleState
    m_pred: np.ndarray


@dataclass(frozen=True)
class ImmBank:
    """Model-conditioned filters, their probabilities and fused outputs."""

    models: tuple[KinematicModel, ...]
    states: tuple[FilterState, ...]
    probs: np.ndarray            # posterior model probabilities
    transition: np.ndarray       # row-stochastic, T[from, to]
    pred_probs: np.ndarray       # one-step-ahead model probabilities
    prediction: VehicleState     # fused prediction for beam pointing
    m_prediction: np.ndarray
    uniform_prediction: bool = False


def _distance(road: RoadGeometry, s: float, n: float, rsu: RsuConfig) -> float:
    g = _geom_eval(road, s, n, rsu.x0, rsu.y0, rsu.height_h)
    return g["d"]


def evolve(
    x: VehicleState, dt: float, road: RoadGeometry, rsu: RsuConfig, model: KinematicModel
) -> VehicleState:
    """Noise-free state evolution over one epoch.

    Velocities persist, positions integrate them, and the reflection
    coefficient scales with the inverse-square distance ratio.  The LK
    hypothesis holds ``n`` fixed and pins ``v_n`` to zero.
    """
    s_new = x.s + x.v_s * dt
    if model.kind is ModelKind.LK:
        n_new = x.n
        vn_new = 0.0
    else:
        n_new = x.n + x.v_n * dt
        vn_new = x.v_n
    d_old = _distance(road, x.s, x.n, rsu)
    d_new = _distance(road, s_new, n_new, rsu)
    ratio = (d_old * d_old) / (d_new * d_new)
    return VehicleState(
        s=s_new,
        v_s=x.v_s,
        n=n_new,
        v_n=vn_new,
        beta_re=x.beta_re * ratio,
        beta_im=x.beta_im * ratio,
    )


def measure(x: VehicleState, road: RoadGeometry, rsu: RsuConfig) -> np.ndarray:
    """Noiseless measurement vector h(x)."""
    return noiseless_measurement(x, road, rsu)


def jacobian_g(
    x: VehicleState,
    dt: float,
    road: RoadGeometry,
    rsu: RsuConfig,
    model: KinematicModel | None = None,
) -> np.ndarray:
    """State-evolution Jacobian at x (defaults to the LC hypothesis)."""
    lk = model is not None and model.kind is ModelKind.LK
    s_new = x.s + x.v_s * dt
    n_new = x.n if lk else x.n + x.v_n * dt

    g_old = _geom_eval(road, x.s, x.n, rsu.x0, rsu.y0, rsu.height_h)
    g_new = _geom_eval(road, s_new, n_new, rsu.x0, rsu.y0, rsu.height_h)
    d0, d1 = g_old["d"], g_new["d"]
    ratio = (d0 * d0) / (d1 * d1)

    # ratio = d(s,n)^2 / d(s', n')^2 with s' = s + v_s dt, n' = n (+ v_n dt)
    dr_ds = 2.0 * (d0 * g_old["dd_ds"] / d1**2 - d0**2 * g_new["dd_ds"] / d1**3)
    dr_dn = 2.0 * (d0 * g_old["dd_dn"] / d1**2 - d0**2 * g_new["dd_dn"] / d1**3)
    dr_dvs = -2.0 * d0**2 * g_new["dd_ds"] * dt / d1**3
    dr_dvn = 0.0 if lk else -2.0 * d0**2 * g_new["dd_dn"] * dt / d1**3

    g = np.eye(6)
    g[0, 2] = dt
    if lk:
        g[1, 3] = 0.0
        g[3, 3] = 0.0
    else:
        g[1, 3] = dt
    grad = np.array([dr_ds, dr_dn, dr_dvs, dr_dvn])
    g[4, :4] = x.beta_re * grad
    g[5, :4] = x.beta_im * grad
    g[4, 4] = ratio
    g[5, 5] = ratio
    return g


def jacobian_h(x: VehicleState, road: RoadGeometry, rsu: RsuConfig) -> np.ndarray:
    """Measurement Jacobian at x.

    The Doppler row carries the tangent-angle rate d(alpha)/ds that the
    chain rule introduces on curved roads in addition to the direct
    azimuth sensitivity.
    """
    g = _geom_eval(road, x.s, x.n, rsu.x0, rsu.y0, rsu.height_h)
    lam = rsu.wavelength
    psi = g["theta"] - g["alpha"]
    cos_psi = np.cos(psi)
    sin_psi = np.sin(psi)
    v_r = x.v_s * cos_psi + x.v_n * sin_psi
    dvr_dpsi = -x.v_s * sin_psi + x.v_n * cos_psi

    d, rg = g["d"], g["rg"]
    dcosphi_ds = (g["drg_ds"] * d - rg * g["dd_ds"]) / d**2
    dcosphi_dn = (g["drg_dn"] * d - rg * g["dd_dn"]) / d**2

    two_over_lam = 2.0 / lam
    dmu_ds = two_over_lam * (
        dcosphi_ds * v_r + g["cos_phi"] * dvr_dpsi * (g["dtheta_ds"] - g["kappa"])
    )
    dmu_dn = two_over_lam * (dcosphi_dn * v_r + g["cos_phi"] * dvr_dpsi * g["dtheta_dn"])
    dmu_dvs = two_over_lam * g["cos_phi"] * cos_psi
    dmu_dvn = two_over_lam * g["cos_phi"] * sin_psi

    two_over_c = 2.0 / C_LIGHT
    h = np.zeros((6, 6))
    h[0, 0] = g["dtheta_ds"]
    h[0, 1] = g["dtheta_dn"]
    h[1, 0] = g["dphi_ds"]
    h[1, 1] = g["dphi_dn"]
    h[2, :4] = [dmu_ds, dmu_dn, dmu_dvs, dmu_dvn]
    h[3, 0] = two_over_c * g["dd_ds"]
    h[3, 1] = two_over_c * g["dd_dn"]
    h[4, 4] = 1.0
    h[5, 5] = 1.0
    return h


def _wrap_residual(r: np.ndarray) -> np.ndarray:
    """Wrap the two angle components into (-pi, pi]."""
    out = r.copy()
    for i in (0, 1):
        w = np.remainder(out[i] + np.pi, 2.0 * np.pi) - np.pi
        if w <= -np.pi:
            w = np.pi
        out[i] = w
    return out


def _scaled_solve(s_mat: np.ndarray, rhs_t: np.ndarray):
    """Solve X @ S = rhs_t^T robustly despite mixed units.

    The innovation covariance spans tens of decades across components
    (radians^2 vs seconds^2), so singularity is judged on the
    correlation-normalized matrix; a raw condition number would be
    meaningless.  Returns (X, sqrt-diag, normalized matrix).
    """
    dvec = np.sqrt(np.diag(s_mat))
    if np.any(dvec <= 0) or not np.all(np.isfinite(dvec)):
        raise SingularInnovation("innovation covariance has a non-positive diagonal")
    shat = s_mat / np.outer(dvec, dvec)
    if np.linalg.cond(shat) > COND_LIMIT:
        raise SingularInnovation("innovation covariance numerically singular")
    x = np.linalg.solve(shat, rhs_t / dvec[:, None]).T / dvec[None, :]
    return x, dvec, shat


def _ekf_update(
    x_pred: VehicleState,
    m_pred: np.ndarray,
    y: np.ndarray,
    q_m: np.ndarray,
    road: RoadGeometry,
    rsu: RsuConfig,
    gate_prob: float | None = None,
):
    """Measurement update from a one-step prior.  Returns posterior and log-likelihood."""
    h_mat = jacobian_h(x_pred, road, rsu)
    resid = _wrap_residual(y - measure(x_pred, road, rsu))
    s_mat = h_mat @ m_pred @ h_mat.T + q_m
    k_gain, dvec, shat = _scaled_solve(s_mat, (m_pred @ h_mat.T).T)

    u = np.linalg.solve(shat, resid / dvec)
    maha = float((resid / dvec) @ u)
    loglik = -0.5 * (
        maha + 6.0 * np.log(2.0 * np.pi) + np.linalg.slogdet(shat)[1] + 2.0 * np.sum(np.log(dvec))
    )

    if gate_prob is not None and maha > chi2.ppf(gate_prob, 6):
        return x_pred, m_pred.copy(), loglik

    x_post = x_pred.as_vector() + k_gain @ resid
    m_post = (np.eye(6) - k_gain @ h_mat) @ m_pred
    m_post = 0.5 * (m_post + m_post.T)
    return VehicleState.from_vector(x_post), m_post, loglik


def _ekf_predict(
    x_post: VehicleState,
    m_post: np.ndarray,
    model: KinematicModel,
    dt: float,
    road: RoadGeometry,
    rsu: RsuConfig,
):
    x_pred = evolve(x_post, dt, road, rsu, model)
    g_mat = jacobian_g(x_post, dt, road, rsu, model)
    m_pred = g_mat @ m_post @ g_mat.T + model.q_s.q_s
    return x_pred, 0.5 * (m_pred + m_pred.T)


def ekf_step(
    f: FilterState,
    y: Observation,
    q_m: MeasurementNoise,
    model: KinematicModel,
    dt: float,
    road: RoadGeometry,
    rsu: RsuConfig,
    gate_prob: float | None = None,
) -> FilterState:
    """One filter cycle: update with y from the stored prior, then predict.

    Angle residuals are wrapped into (-pi, pi] and the posterior MSE
    matrix is symmetrized after the simple-form update.
    """
    y_vec = y.as_vector() if isinstance(y, Observation) else np.asarray(y, float)
    x_post, m_post, _ = _ekf_update(
        f.x_pred, f.m_pred, y_vec, q_m.q_m, road, rsu, gate_prob=gate_prob
    )
    x_pred, m_pred = _ekf_predict(x_post, m_post, model, dt, road, rsu)
    return FilterState(x_hat=x_post, m=m_post, x_pred=x_pred, m_pred=m_pred)


def _validate_transition(t: np.ndarray, n_models: int) -> np.ndarray:
    t = np.asarray(t, float)
    if t.shape != (n_models, n_models):
        raise BadTransitionMatrix(f"transition matrix must be {n_models}x{n_models}")
    if np.any(t < 0):
        raise BadTransitionMatrix("transition probabilities must be non-negative")
    if not np.allclose(t.sum(axis=1), 1.0, atol=1e-9):
        raise BadTransitionMatrix("transition matrix rows must sum to 1")
    return t


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(np.asarray(m, float))
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def _mix_and_predict(
    models, posteriors, probs, transition, dt, road, rsu, uniform_prediction
):
    """IMM interaction step: mix posteriors, run per-model prediction,
    and fuse the one-step prediction used for beam pointing."""
    n = len(models)
    pred_probs = transition.T @ probs
    safe = np.maximum(pred_probs, 1e-300)

    x_vecs = [x.as_vector() for x, _ in posteriors]
    preds = []
    for j in range(n):
        w = transition[:, j] * probs / safe[j]
        x_mix = sum(w[i] * x_vecs[i] for i in range(n))
        m_mix = np.zeros((6, 6))
        for i in range(n):
            dx = x_vecs[i] - x_mix
            m_mix = m_mix + w[i] * (posteriors[i][1] + np.outer(dx, dx))
        x_pred, m_pred = _ekf_predict(
            VehicleState.from_vector(x_mix), m_mix, models[j], dt, road, rsu
        )
        preds.append((x_pred, m_pred))

    weights = np.full(n, 1.0 / n) if uniform_prediction else pred_probs
    xp_vecs = [p.as_vector() for p, _ in preds]
    x_fused = sum(weights[j] * xp_vecs[j] for j in range(n))
    m_fused = np.zeros((6, 6))
    for j in range(n):
        dx = xp_vecs[j] - x_fused
        m_fused = m_fused + weights[j] * (preds[j][1] + np.outer(dx, dx))
    return preds, pred_probs, VehicleState.from_vector(x_fused), m_fused


def initialize_bank(
    truth0: VehicleState,
    init_cov: np.ndarray | None,
    t: np.ndarray,
    models,
    rng: np.random.Generator,
    dt: float,
    road: RoadGeometry,
    rsu: RsuConfig,
    uniform_prediction: bool = False,
) -> ImmBank:
    """Start all hypotheses from one shared initialization draw.

    The handoff-grade estimate is truth plus a Gaussian draw with
    ``init_cov`` (shared across models, as a single acquisition produces
    it); model probabilities start uniform.  The first fused prediction
    is computed immediately so the first beam can be formed.
    """
    models = tuple(models)
    t = _validate_transition(t, len(models))
    cov = _DEFAULT_INIT_COV if init_cov is None else np.asarray(init_cov, float)
    x0 = truth0.as_vector() + _psd_sqrt(cov) @ rng.standard_normal(6)
    x0_state = VehicleState.from_vector(x0)

    probs = np.full(len(models), 1.0 / len(models))
    posteriors = [(x0_state, cov.copy()) for _ in models]
    preds, pred_probs, x_fused, m_fused = _mix_and_predict(
        models, posteriors, probs, t, dt, road, rsu, uniform_prediction
    )
    states = tuple(
        FilterState(x_hat=x0_state, m=cov.copy(), x_pred=p, m_pred=mp)
        for p, mp in preds
    )
    return ImmBank(
        models=models,
        states=states,
        probs=probs,
        transition=t,
        pred_probs=pred_probs,
        prediction=x_fused,
        m_prediction=m_fused,
        uniform_prediction=uniform_prediction,
    )


def imm_step(
    bank: ImmBank,
    y: Observation,
    q_m: MeasurementNoise,
    dt: float,
    road: RoadGeometry,
    rsu: RsuConfig,
) -> tuple[ImmBank, VehicleState, np.ndarray, VehicleState]:
    """One IMM cycle.

    Each elementary filter updates from its mixed prior, model
    probabilities are refreshed from Gaussian residual likelihoods, the
    posteriors are fused, and the interaction/prediction for the next
    epoch is carried out immediately so the next beam can be pointed.
    Returns (new bank, fused prediction, fused predicted MSE, fused
    estimate).
    """
    y_vec = y.as_vector() if isinstance(y, Observation) else np.asarray(y, float)
    n = len(bank.models)

    posteriors = []
    logliks = np.empty(n)
    for i in range(n):
        st = bank.states[i]
        x_post, m_post, ll = _ekf_update(st.x_pred, st.m_pred, y_vec, q_m.q_m, road, rsu)
        posteriors.append((x_post, m_post))
        logliks[i] = ll

    log_w = logliks + np.log(np.maximum(bank.pred_probs, 1e-300))
    peak = np.max(log_w)
    if not np.isfinite(peak):
        log.warning("all model likelihoods vanished; holding prior mixing probabilities")
        probs = bank.pred_probs.copy()
    else:
        probs = np.exp(log_w - peak)
        probs = probs / probs.sum()

    x_vecs = [x.as_vector() for x, _ in posteriors]
    x_fused_vec = sum(probs[i] * x_vecs[i] for i in range(n))
    m_fused = np.zeros((6, 6))
    for i in range(n):
        dx = x_vecs[i] - x_fused_vec
        m_fused = m_fused + probs[i] * (posteriors[i][1] + np.outer(dx, dx))
    x_fused = VehicleState.from_vector(x_fused_vec)

    preds, pred_probs, x_pred_fused, m_pred_fused = _mix_and_predict(
        bank.models, posteriors, probs, bank.transition, dt, road, rsu,
        bank.uniform_prediction,
    )
    states = tuple(
        FilterState(x_hat=posteriors[i][0], m=posteriors[i][1],
                    x_pred=preds[i][0], m_pred=preds[i][1])
        for i in range(n)
    )
    new_bank = ImmBank(
        models=bank.models,
        states=states,
        probs=probs,
        transition=bank.transition,
        pred_probs=pred_probs,
        prediction=x_pred_fused,
        m_prediction=m_pred_fused,
        uniform_prediction=bank.uniform_prediction,
    )
    return new_bank, x_pred_fused, m_pred_fused, x_fused


def nees(x_est: VehicleState, m: np.ndarray, truth: VehicleState) -> float:
    """Normalized estimation error squared of one posterior."""
    e = x_est.as_vector() - truth.as_vector()
    dvec = np.sqrt(np.diag(m))
    dvec = np.where(dvec > 0, dvec, 1.0)
    mhat = m / np.outer(dvec, dvec)
    u = np.linalg.solve(mhat, e / dvec)
    return float((e / dvec) @ u)
