"""Monte-Carlo simulation harness.

A scenario bundles a road, a transceiver, an initial state, a motion
schedule and tracker/beam settings.  Each replication draws independent
noise from a counter-based Philox stream keyed by (scenario seed, run
index), so batches are reproducible bit-for-bit and runs never share
stream state.

Epoch ordering: the tracker's one-step prediction (formed at the end of
the previous epoch) points the beam, the realized gain against the true
angles sets this epoch's measurement quality, the tracker then updates.
The beam for epoch l therefore uses only epoch l-1 information.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import beam as beam_mod
from . import channel, road as road_mod, tracking
from .channel import BeamConfig, MeasurementNoise, Observation, RsuConfig
from .errors import BeamTrackError, NoData, OutOfRange, UsageError
from .road import CartesianPoint, CcsPoint, RoadGeometry, _geom_eval, cartesian_to_ccs
from .tracking import (
    ImmBank,
    KinematicModel,
    ModelKind,
    VehicleState,
    initialize_bank,
    process_noise_matrix,
)

__all__ = [
    "ScheduleInterval",
    "Scenario",
    "EpochRecord",
    "RunResult",
    "MetricsSummary",
    "scenario_from_dict",
    "generate_truth",
    "run_single",
    "run_scenario",
    "aggregate",
    "baseline_cartesian_diff",
    "country_road_dict",
    "roundabout_road_dict",
]

TRACKERS = ("imm", "ekf-lk", "ekf-lc", "cartesian", "straight")
BEAM_MODES = ("constant", "dynamic", "oracle")

#: Power ratio defining the aligned flag (gain within 3 dB of the peak).
ALIGNED_RATIO = 10.0 ** (-3.0 / 10.0)

#: Cartesian estimate error beyond which a run is flagged diverged.
DIVERGENCE_LIMIT_M = 50.0


@dataclass(frozen=True)
class ScheduleInterval:
    """Nominal piecewise-constant velocities over [t_start, t_end) seconds."""

    t_start: float
    t_end: float
    v_s: float
    v_n: float


@dataclass
class Scenario:
    road: RoadGeometry
    rsu: RsuConfig
    init: VehicleState
    schedule: list[ScheduleInterval]
    epochs: int
    mc_runs: int
    seed: int
    tracker: str = "imm"
    beam_mode: str = "constant"
    gamma: float = 0.05
    k0: float = beam_mod.K0_3DB
    imm_models: tuple[str, ...] = ("LK", "LC")
    transition: np.ndarray = field(
        default_factory=lambda: np.array([[0.95, 0.05], [0.05, 0.95]])
    )
    uniform_prediction: bool = False
    sigma_s: float = 0.08
    sigma_n: float = 0.016
    sigma_vs: float = 0.1
    sigma_vn: float = 0.02
    sigma_beta: float = 2e-6
    rho_s_vs: float = 0.0
    rho_n_vn: float = 0.0
    init_cov: np.ndarray | None = None
    world_kinematic: str = "lc"
    world_noise_scale: float = 1.0
    meas_noise_scale: float = 1.0
    boundary: str = "error"          # or "clamp"
    printed_t_sigma: bool = False
    printed_axis: bool = False
    semantic: dict = field(default_factory=dict)

    def world_model(self) -> KinematicModel:
        kind = ModelKind.LK if self.world_kinematic == "lk" else ModelKind.LC
        return KinematicModel(kind=kind, q_s=self._noise_for(kind))

    def _noise_for(self, kind: ModelKind):
        return process_noise_matrix(
            self.sigma_s, self.sigma_n, self.sigma_vs, self.sigma_vn,
            self.sigma_beta, self.rho_s_vs, self.rho_n_vn, kind=kind,
        )

    def filter_models(self, names) -> tuple[KinematicModel, ...]:
        out = []
        for name in names:
            kind = ModelKind.LK if name.lower() == "lk" else ModelKind.LC
            out.append(KinematicModel(kind=kind, q_s=self._noise_for(kind)))
        return tuple(out)


def _rsu_from_dict(d: dict) -> RsuConfig:
    x0, y0, h = d["rsu_xyh"]
    sigma2_dbm = d["noise_psd_dbm_hz"] + 10.0 * np.log10(d["bw_hz"])
    crlb = d.get("crlb", {})
    return RsuConfig(
        x0=float(x0),
        y0=float(y0),
        height_h=float(h),
        cols_m=int(d["array_m"]),
        rows_n=int(d["array_n"]),
        carrier_fc=float(d["fc_hz"]),
        bandwidth_bw=float(d["bw_hz"]),
        tx_power_p=10.0 ** ((d["tx_power_dbm"] - 30.0) / 10.0),
        noise_var_sigma2=10.0 ** ((sigma2_dbm - 30.0) / 10.0),
        sample_rate_fs=float(d.get("fs_hz", 2.0 * d["bw_hz"])),
        n_sample=int(d.get("n_sample", 1024)),
        epoch_dt=float(d.get("dt_s", 0.02)),
        pathloss_eta=float(d.get("eta", 1.0)),
        tau_printed=bool(crlb.get("tau_printed", False)),
    )


def scenario_from_dict(cfg: dict, base_dir: str = ".") -> Scenario:
    """Materialize a scenario from its parsed configuration.

    ``road`` may be an inline definition or a path relative to
    ``base_dir``.  Unknown trackers/beam modes and invalid probability
    targets are rejected here so the CLI can surface them as usage
    errors.
    """
    road_ref = cfg["road"]
    if isinstance(road_ref, str):
        import os

        road_spec = json.load(open(os.path.join(base_dir, road_ref), encoding="utf-8"))
    else:
        road_spec = road_ref
    road = road_mod.load_road(road_spec)
    rsu = _rsu_from_dict(cfg["rsu"])

    init_d = cfg.get("init", {})
    init = VehicleState(
        s=float(init_d.get("s", 2.0)),
        v_s=float(init_d.get("v_s", 10.0)),
        n=float(init_d.get("n", 0.0)),
        v_n=float(init_d.get("v_n", 0.0)),
        beta_re=float(init_d.get("beta_re", 2e-5)),
        beta_im=float(init_d.get("beta_im", 2e-5)),
    )
    schedule = [
        ScheduleInterval(
            t_start=float(iv["t_start"]), t_end=float(iv["t_end"]),
            v_s=float(iv["v_s"]), v_n=float(iv.get("v_n", 0.0)),
        )
        for iv in cfg.get("schedule", [])
    ] or [ScheduleInterval(0.0, cfg["epochs"] * rsu.epoch_dt, init.v_s, init.v_n)]

    imm_d = cfg.get("imm", {})
    noise_d = cfg.get("process_noise", {})
    beam_d = cfg.get("beam", {})
    world_d = cfg.get("world", {})

    tracker = str(cfg.get("tracker", "imm")).lower()
    if tracker not in TRACKERS:
        raise UsageError(f"unknown tracker {tracker!r}; choose from {TRACKERS}")
    mode = str(beam_d.get("mode", "dynamic" if beam_d.get("dynamic") else "constant")).lower()
    if mode not in BEAM_MODES:
        raise UsageError(f"unknown beam mode {mode!r}; choose from {BEAM_MODES}")
    gamma = float(beam_d.get("gamma", 0.05))
    if not 0.0 < gamma < 1.0:
        raise UsageError(f"gamma={gamma} outside (0, 1)")
    if mode == "dynamic" and tracker == "cartesian":
        raise UsageError("dynamic beamwidth needs a tracker with a predicted MSE matrix")

    epochs = int(cfg["epochs"])
    runs = int(cfg.get("mc_runs", 1))
    if epochs < 1 or runs < 1:
        raise UsageError("epochs and mc_runs must be positive")

    sc = Scenario(
        road=road,
        rsu=rsu,
        init=init,
        schedule=schedule,
        epochs=epochs,
        mc_runs=runs,
        seed=int(cfg.get("seed", 0)),
        tracker=tracker,
        beam_mode=mode,
        gamma=gamma,
        k0=float(beam_d.get("k0", beam_mod.K0_3DB)),
        imm_models=tuple(imm_d.get("models", ["LK", "LC"])),
        transition=np.array(imm_d.get("transition", [[0.95, 0.05], [0.05, 0.95]]), float),
        uniform_prediction=bool(imm_d.get("uniform_prediction", False)),
        sigma_s=float(noise_d.get("sigma_s", 0.08)),
        sigma_n=float(noise_d.get("sigma_n", 0.016)),
        sigma_vs=float(noise_d.get("sigma_vs", 0.1)),
        sigma_vn=float(noise_d.get("sigma_vn", 0.02)),
        sigma_beta=float(noise_d.get("sigma_beta", 2e-6)),
        rho_s_vs=float(noise_d.get("rho_s_vs", 0.0)),
        rho_n_vn=float(noise_d.get("rho_n_vn", 0.0)),
        init_cov=np.array(cfg["init_cov"], float) if "init_cov" in cfg else None,
        world_kinematic=str(world_d.get("kinematic", "lc")).lower(),
        world_noise_scale=float(world_d.get("noise_scale", 1.0)),
        meas_noise_scale=float(world_d.get("measurement_noise_scale", 1.0)),
        boundary=str(world_d.get("boundary", "error")).lower(),
        printed_t_sigma=bool(beam_d.get("t_sigma_printed", False)),
        printed_axis=bool(beam_d.get("axis_printed", False)),
        semantic=_semantic_echo(cfg, road_spec),
    )
    return sc


def _semantic_echo(cfg: dict, road_spec: dict) -> dict:
    """Configuration subset whose change must change the scenario hash."""
    out = {k: v for k, v in cfg.items() if k not in ("output",)}
    out["road"] = road_spec
    return out


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def _nominal_velocity(schedule, t: float) -> tuple[float, float]:
    for iv in schedule:
        if iv.t_start - 1e-12 <= t < iv.t_end - 1e-12:
            return iv.v_s, iv.v_n
    last = schedule[-1]
    return (last.v_s, last.v_n) if t >= last.t_end - 1e-12 else (schedule[0].v_s, schedule[0].v_n)


def generate_truth(sc: Scenario, road: RoadGeometry, rng: np.random.Generator):
    """Integrate the true trajectory at the epoch rate.

    Velocities are reset to the schedule's nominal value whenever a new
    interval begins and otherwise evolve under the same per-epoch system
    noise the filters assume (scaled by ``world.noise_scale``; zero gives
    the deterministic trajectory).  Raises :class:`OutOfRange`/OffRoad on
    leaving the road unless the boundary policy is ``clamp``.
    """
    model = sc.world_model()
    lk_world = model.kind is ModelKind.LK
    noise_root = tracking._psd_sqrt(model.q_s.q_s) * sc.world_noise_scale
    dt = sc.rsu.epoch_dt
    half_w = road.lane_half_width

    v_s0, v_n0 = _nominal_velocity(sc.schedule, 0.0)
    x = replace(sc.init, v_s=v_s0, v_n=0.0 if lk_world else v_n0)
    out = [x]
    prev_nominal = (v_s0, v_n0)
    for l in range(1, sc.epochs + 1):
        t_prev = (l - 1) * dt
        nominal = _nominal_velocity(sc.schedule, t_prev)
        if nominal != prev_nominal:
            x = replace(x, v_s=nominal[0], v_n=0.0 if lk_world else nominal[1])
            prev_nominal = nominal
        x = _truth_step(x, dt, road, sc.rsu, model, sc.boundary)
        if abs(noise_root).max() > 0:
            w = noise_root @ rng.standard_normal(6)
            x = VehicleState.from_vector(x.as_vector() + w)
        if abs(x.n) > half_w:
            if sc.boundary == "clamp":
                x = replace(x, n=float(np.clip(x.n, -half_w, half_w)))
            else:
                raise OutOfRange(f"truth left the lane at epoch {l}: n={x.n:.3f}")
        out.append(x)
    return out


def _truth_step(x, dt, road, rsu, model, boundary):
    try:
        return tracking.evolve(x, dt, road, rsu, model)
    except OutOfRange:
        if boundary != "clamp":
            raise
        s_new = float(np.clip(x.s + x.v_s * dt, 0.0, road.total_length))
        clamped = replace(x, s=s_new - x.v_s * dt)
        return tracking.evolve(clamped, dt, road, rsu, model)


# ---------------------------------------------------------------------------
# trackers
# ---------------------------------------------------------------------------


class _BankTracker:
    """IMM bank (one or more hypotheses) operating on a road model."""

    def __init__(self, sc: Scenario, model_names, frame_road: RoadGeometry,
                 rng: np.random.Generator):
        self.road = frame_road
        self.rsu = sc.rsu
        self.dt = sc.rsu.epoch_dt
        models = sc.filter_models(model_names)
        if len(models) == 1:
            transition = np.array([[1.0]])
        else:
            transition = sc.transition
        self.bank: ImmBank = initialize_bank(
            sc.init, sc.init_cov, transition, models, rng, self.dt, frame_road,
            sc.rsu, uniform_prediction=sc.uniform_prediction,
        )
        self._names = tuple(n.lower() for n in model_names)
        self.diverged = False
        self.estimate = self.bank.states[0].x_hat
        self.m_post = (np.array(sc.init_cov, float)
                       if sc.init_cov is not None else tracking._DEFAULT_INIT_COV.copy())

    @property
    def prediction(self) -> VehicleState:
        return self.bank.prediction

    @property
    def m_prediction(self) -> np.ndarray:
        return self.bank.m_prediction

    def point_angles(self):
        g = _geom_eval(self.road, self.prediction.s, self.prediction.n,
                       self.rsu.x0, self.rsu.y0, self.rsu.height_h)
        return g["theta"], g["phi"]

    def update(self, y: Observation, q_m: MeasurementNoise):
        if self.diverged:
            self._coast()
            return
        try:
            self.bank, _, _, fused = tracking.imm_step(
                self.bank, y, q_m, self.dt, self.road, self.rsu
            )
            self.estimate = fused
            self.m_post = self._fused_posterior_m()
        except BeamTrackError:
            self.diverged = True
            self._coast()

    def _fused_posterior_m(self):
        p = self.bank.probs
        xs = [st.x_hat.as_vector() for st in self.bank.states]
        xf = sum(p[i] * xs[i] for i in range(len(xs)))
        m = np.zeros((6, 6))
        for i, st in enumerate(self.bank.states):
            dx = xs[i] - xf
            m = m + p[i] * (st.m + np.outer(dx, dx))
        return m

    def _coast(self):
        """After divergence keep predicting without measurement updates."""
        try:
            states = []
            for model, st in zip(self.bank.models, self.bank.states):
                x_pred, m_pred = tracking._ekf_predict(
                    st.x_pred, st.m_pred, model, self.dt, self.road, self.rsu
                )
                states.append(replace(st, x_hat=st.x_pred, m=st.m_pred,
                                      x_pred=x_pred, m_pred=m_pred))
            self.estimate = states[0].x_hat
            self.bank = replace(
                self.bank,
                states=tuple(states),
                prediction=states[0].x_pred,
                m_prediction=states[0].m_pred,
            )
        except BeamTrackError:
            pass  # fully frozen at the road boundary

    def model_probs(self):
        if len(self._names) == 1:
            return (1.0, 0.0) if self._names[0] == "lk" else (0.0, 1.0)
        p = {name: float(self.bank.probs[i]) for i, name in enumerate(self._names)}
        return p.get("lk", 0.0), p.get("lc", 0.0)

    def cartesian(self, state: VehicleState):
        g = _geom_eval(self.road, state.s, state.n,
                       self.rsu.x0, self.rsu.y0, self.rsu.height_h)
        return g["x"], g["y"]


class _StraightRoadTracker(_BankTracker):
    """Matched-filter structure, mismatched map: a straight road through
    the true road's first two control points."""

    def __init__(self, sc: Scenario, rng: np.random.Generator):
        p0, p1 = np.asarray(sc.road.control_points[:2], float)
        u = (p1 - p0) / np.linalg.norm(p1 - p0)
        length = sc.road.total_length + 100.0
        pts = [p0, p0 + u * (length / 2.0), p0 + u * length]
        fake = road_mod.fit_spline(pts, lane_half_width=sc.road.lane_half_width)
        super().__init__(sc, ["LK"], fake, rng)


def baseline_cartesian_diff(history) -> CartesianPoint:
    """Quadratic backward-difference extrapolation of the next position.

    With positions p[l-2], p[l-1], p[l] the prediction is
    3 p[l] - 3 p[l-1] + p[l-2]; exact for uniform linear motion.
    """
    from .errors import InsufficientHistory

    if len(history) < 3:
        raise InsufficientHistory("need 3 past positions")
    (x2, y2), (x1, y1), (x0, y0) = history[-3], history[-2], history[-1]
    return CartesianPoint(3.0 * x0 - 3.0 * x1 + x2, 3.0 * y0 - 3.0 * y1 + y2)


class _CartesianDiffTracker:
    """Road-agnostic baseline: positions from raw (angle, delay)
    measurements, prediction by second-order differences in the plane."""

    def __init__(self, sc: Scenario, rng: np.random.Generator):
        self.sc = sc
        self.rsu = sc.rsu
        self.road = sc.road
        dt = sc.rsu.epoch_dt
        self.diverged = False
        self.m_prediction = None
        # warm-up history: back-extrapolate the initial state along the road
        hist = []
        for k in (2, 1, 0):
            s = sc.init.s - sc.init.v_s * dt * k
            n = sc.init.n - sc.init.v_n * dt * k
            g = _geom_eval(self.road, max(s, 0.0), n, self.rsu.x0, self.rsu.y0,
                           self.rsu.height_h)
            hist.append((g["x"], g["y"]))
        self.history = hist
        self._predict()
        self.est_xy = hist[-1]

    def _predict(self):
        p = baseline_cartesian_diff(self.history)
        self.pred_xy = (p.x, p.y)

    def point_angles(self):
        x, y = self.pred_xy
        dx, dy = x - self.rsu.x0, y - self.rsu.y0
        rg = max(np.hypot(dx, dy), 1e-9)
        d = np.hypot(rg, self.rsu.height_h)
        return float(np.arctan2(dy, dx)), float(np.arcsin(self.rsu.height_h / d))

    def update(self, y: Observation, q_m: MeasurementNoise):
        d = channel.C_LIGHT * y.tau_hat / 2.0
        rg_sq = d * d - self.rsu.height_h**2
        rg = np.sqrt(max(rg_sq, 1e-4))
        x = self.rsu.x0 + rg * np.cos(y.theta_hat)
        yy = self.rsu.y0 + rg * np.sin(y.theta_hat)
        self.est_xy = (float(x), float(yy))
        self.history.append(self.est_xy)
        if len(self.history) > 3:
            self.history.pop(0)
        self._predict()

    def model_probs(self):
        return float("nan"), float("nan")

    def _to_ccs(self, xy) -> VehicleState:
        p = cartesian_to_ccs(self.road, CartesianPoint(*xy), strict=False)
        (x1, y1), (x0, y0) = self.history[-2], self.history[-1]
        speed = np.hypot(x0 - x1, y0 - y1) / self.rsu.epoch_dt
        return VehicleState(s=p.s, v_s=float(speed), n=p.n, v_n=0.0,
                            beta_re=0.0, beta_im=0.0)

    @property
    def prediction(self) -> VehicleState:
        return self._to_ccs(self.pred_xy)

    @property
    def estimate(self) -> VehicleState:
        return self._to_ccs(self.est_xy)

    @property
    def m_post(self):
        return None

    def cartesian(self, which_state):
        raise NotImplementedError

    def pred_cartesian(self):
        return self.pred_xy

    def est_cartesian(self):
        return self.est_xy


def _build_tracker(sc: Scenario, rng: np.random.Generator):
    if sc.tracker == "imm":
        return _BankTracker(sc, sc.imm_models, sc.road, rng)
    if sc.tracker == "ekf-lk":
        return _BankTracker(sc, ["LK"], sc.road, rng)
    if sc.tracker == "ekf-lc":
        return _BankTracker(sc, ["LC"], sc.road, rng)
    if sc.tracker == "straight":
        return _StraightRoadTracker(sc, rng)
    if sc.tracker == "cartesian":
        return _CartesianDiffTracker(sc, rng)
    raise UsageError(f"unknown tracker {sc.tracker!r}")


# ---------------------------------------------------------------------------
# epoch loop and aggregation
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    t_ms: float
    truth: VehicleState
    pred: VehicleState
    est: VehicleState
    theta_point: float
    phi_point: float
    active_m: int
    active_n: int
    kappa_t: float
    rate: float
    aligned: bool
    p_lk: float
    p_lc: float
    nees: float
    pred_mse_s: float
    pred_mse_n: float
    true_xy: tuple[float, float]
    est_xy: tuple[float, float]
    pred_xy: tuple[float, float]


@dataclass
class RunResult:
    run_idx: int
    records: list[EpochRecord]
    diverged: bool


def run_single(sc: Scenario, run_idx: int) -> RunResult:
    """One replication: truth, tracker and the per-epoch loop."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([sc.seed, run_idx])))
    truth = generate_truth(sc, sc.road, rng)
    tracker = _build_tracker(sc, rng)
    rsu = sc.rsu
    full_m, full_n = rsu.cols_m, rsu.rows_n

    records: list[EpochRecord] = []
    diverged = False
    for l in range(1, sc.epochs + 1):
        x_true = truth[l]
        g_true = _geom_eval(sc.road, x_true.s, x_true.n, rsu.x0, rsu.y0, rsu.height_h)

        pred_state = tracker.prediction
        m_pred = tracker.m_prediction
        if sc.beam_mode == "oracle":
            beam = BeamConfig(active_m=full_m, active_n=full_n,
                              point_theta=g_true["theta"], point_phi=g_true["phi"])
        elif sc.beam_mode == "dynamic":
            plan = beam_mod.plan_beam(
                m_pred, pred_state, tracker.road if hasattr(tracker, "road") else sc.road,
                rsu, sc.gamma, k0=sc.k0,
                printed_t_sigma=sc.printed_t_sigma, printed_axis=sc.printed_axis,
            )
            th, ph = tracker.point_angles()
            beam = BeamConfig(active_m=plan.best_m, active_n=plan.best_n,
                              point_theta=th, point_phi=ph)
        else:
            th, ph = tracker.point_angles()
            beam = BeamConfig(active_m=full_m, active_n=full_n,
                              point_theta=th, point_phi=ph)

        kappa_t = channel.tx_gain(g_true["theta"], g_true["phi"], beam)
        peak = np.sqrt(beam.active_m * beam.active_n)
        aligned = kappa_t**2 >= ALIGNED_RATIO * peak**2
        rate = channel.achievable_rate(rsu, g_true["d"], kappa_t)

        y, q_m = channel.synthesize_observation(
            x_true, sc.road, rsu, beam, rng, noise_scale=sc.meas_noise_scale
        )
        tracker.update(y, q_m)

        est = tracker.estimate
        if isinstance(tracker, _CartesianDiffTracker):
            est_xy = tracker.est_cartesian()
            pred_xy = tracker.pred_cartesian()
            nees_val = float("nan")
        else:
            est_xy = tracker.cartesian(est)
            pred_xy = tracker.cartesian(pred_state)
            nees_val = (
                tracking.nees(est, tracker.m_post, x_true)
                if tracker.m_post is not None and not tracker.diverged
                else float("nan")
            )
        err = np.hypot(est_xy[0] - g_true["x"], est_xy[1] - g_true["y"])
        if err > DIVERGENCE_LIMIT_M or getattr(tracker, "diverged", False):
            diverged = True

        p_lk, p_lc = tracker.model_probs()
        records.append(
            EpochRecord(
                epoch=l,
                t_ms=l * rsu.epoch_dt * 1000.0,
                truth=x_true,
                pred=pred_state,
                est=est,
                theta_point=beam.point_theta,
                phi_point=beam.point_phi,
                active_m=beam.active_m,
                active_n=beam.active_n,
                kappa_t=float(kappa_t),
                rate=float(rate),
                aligned=bool(aligned),
                p_lk=p_lk,
                p_lc=p_lc,
                nees=nees_val,
                pred_mse_s=float(m_pred[0, 0]) if m_pred is not None else float("nan"),
                pred_mse_n=float(m_pred[1, 1]) if m_pred is not None else float("nan"),
                true_xy=(g_true["x"], g_true["y"]),
                est_xy=est_xy,
                pred_xy=pred_xy,
            )
        )
    return RunResult(run_idx=run_idx, records=records, diverged=diverged)


def run_scenario(sc: Scenario, runs: int | None = None, jobs: int = 1):
    """All replications of a scenario.  Results are ordered by run index
    regardless of parallelism, keeping batch output deterministic."""
    n_runs = sc.mc_runs if runs is None else runs
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_single_job, [(sc, i) for i in range(n_runs)]))
    else:
        results = [run_single(sc, i) for i in range(n_runs)]
    return results


def _run_single_job(args):
    sc, idx = args
    return run_single(sc, idx)


@dataclass
class MetricsSummary:
    epochs: int
    runs: int
    t_ms: list[float]
    rmse_s: list[float]
    rmse_n: list[float]
    rmse_pos: list[float]
    mean_rate: float
    mean_rate_trace: list[float]
    rate_cdf_values: list[float]
    rate_cdf_probs: list[float]
    misalignment: float
    misalignment_trace: list[float]
    p_lk_trace: list[float]
    p_lc_trace: list[float]
    pred_mse_s_trace: list[float]
    pred_mse_n_trace: list[float]
    mean_nees: list[float]
    diverged_runs: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def aggregate(results: list[RunResult]) -> MetricsSummary:
    """Cross-run metrics: per-epoch RMSEs, pooled rate CDF, misalignment
    frequency and mean model-probability / predicted-MSE traces."""
    if not results:
        raise NoData("no completed runs to aggregate")
    epochs = len(results[0].records)
    runs = len(results)

    def stack(getter):
        return np.array([[getter(r) for r in res.records] for res in results])

    s_err = stack(lambda r: r.est.s - r.truth.s)
    n_err = stack(lambda r: r.est.n - r.truth.n)
    pos_err = stack(
        lambda r: np.hypot(r.est_xy[0] - r.true_xy[0], r.est_xy[1] - r.true_xy[1])
    )
    rates = stack(lambda r: r.rate)
    aligned = stack(lambda r: 1.0 if r.aligned else 0.0)
    p_lk = stack(lambda r: r.p_lk)
    p_lc = stack(lambda r: r.p_lc)
    mse_s = stack(lambda r: r.pred_mse_s)
    mse_n = stack(lambda r: r.pred_mse_n)
    nees_arr = stack(lambda r: r.nees)

    pooled = np.sort(rates.ravel())
    cdf = np.arange(1, pooled.size + 1) / pooled.size
    t_ms = [r.t_ms for r in results[0].records]

    return MetricsSummary(
        epochs=epochs,
        runs=runs,
        t_ms=t_ms,
        rmse_s=np.sqrt(np.mean(s_err**2, axis=0)).tolist(),
        rmse_n=np.sqrt(np.mean(n_err**2, axis=0)).tolist(),
        rmse_pos=np.sqrt(np.mean(pos_err**2, axis=0)).tolist(),
        mean_rate=float(rates.mean()),
        mean_rate_trace=rates.mean(axis=0).tolist(),
        rate_cdf_values=pooled.tolist(),
        rate_cdf_probs=cdf.tolist(),
        misalignment=float(1.0 - aligned.mean()),
        misalignment_trace=(1.0 - aligned.mean(axis=0)).tolist(),
        p_lk_trace=np.nanmean(p_lk, axis=0).tolist() if np.isfinite(p_lk).any() else [],
        p_lc_trace=np.nanmean(p_lc, axis=0).tolist() if np.isfinite(p_lc).any() else [],
        pred_mse_s_trace=np.nanmean(mse_s, axis=0).tolist(),
        pred_mse_n_trace=np.nanmean(mse_n, axis=0).tolist(),
        mean_nees=np.nanmean(nees_arr, axis=0).tolist()
        if np.isfinite(nees_arr).any()
        else [],
        diverged_runs=sum(1 for r in results if r.diverged),
    )


# ---------------------------------------------------------------------------
# bundled road shapes
# ---------------------------------------------------------------------------


def country_road_dict() -> dict:
    """Gently curved two-lane country road, about 220 m long."""
    xs = np.linspace(0.0, 220.0, 12)
    ys = 10.0 * np.sin(np.pi * xs / 220.0)
    return {
        "control_points": [[float(x), float(y)] for x, y in zip(xs, ys)],
        "lane_half_width": 6.0,
    }


def roundabout_road_dict(radius: float = 50.0, n_points: int = 16) -> dict:
    """Closed circular roundabout; first and last control points coincide."""
    ang = np.linspace(0.0, 2.0 * np.pi, n_points)
    pts = [[float(radius * np.cos(a)), float(radius * np.sin(a))] for a in ang]
    pts[-1] = list(pts[0])
    return {"control_points": pts, "lane_half_width": 6.0}
