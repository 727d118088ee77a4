"""Ready-made scenario configurations.

These mirror the simulation setups used throughout the test suite: a
country road pass with lane keeping, the two lane-change maneuvers on
the country road, a roundabout pass, and a stressed-noise run near the
mast for dynamic-beamwidth studies.  Each builder returns a plain dict
suitable for ``scenario_from_dict`` or for dumping as a scenario file.
"""

from __future__ import annotations

import numpy as np

from .harness import country_road_dict, roundabout_road_dict
from .road import CcsPoint, ccs_to_cartesian, load_road

__all__ = [
    "rsu_dict",
    "country_rsu_xyh",
    "country_lk_scenario",
    "imm_maneuver_scenario",
    "roundabout_scenario",
    "beamwidth_stress_scenario",
    "PRESETS",
]


def rsu_dict(
    xyh,
    array_m: int = 16,
    array_n: int = 16,
    tx_power_dbm: float = 30.0,
    fc_hz: float = 30e9,
    bw_hz: float = 500e6,
    dt_s: float = 0.02,
    n_sample: int = 1024,
    fs_hz: float | None = None,
) -> dict:
    return {
        "fc_hz": fc_hz,
        "bw_hz": bw_hz,
        "tx_power_dbm": tx_power_dbm,
        "noise_psd_dbm_hz": -144.0,
        "array_m": array_m,
        "array_n": array_n,
        "fs_hz": 2.0 * bw_hz if fs_hz is None else fs_hz,
        "n_sample": n_sample,
        "dt_s": dt_s,
        "rsu_xyh": list(xyh),
    }


def country_rsu_xyh(height: float = 10.0, offset: float = 6.0, s_at: float = 110.0):
    """Mast position 6 m left of the country-road centerline near mid-pass."""
    road = load_road(country_road_dict())
    p = ccs_to_cartesian(road, CcsPoint(s_at, offset))
    return [float(p.x), float(p.y), float(height)]


_NOISE_DEFAULT = {
    "sigma_s": 0.08,
    "sigma_n": 0.016,
    "sigma_vs": 0.1,
    "sigma_vn": 0.02,
    "sigma_beta": 2e-6,
}


def country_lk_scenario(
    epochs: int = 300,
    runs: int = 100,
    seed: int = 1,
    tracker: str = "ekf-lc",
    array: int = 16,
    tx_power_dbm: float = 30.0,
    noise_scale: float = 1.0,
) -> dict:
    """Lane-keeping pass on the country road (consistency testing).

    The nominal lateral velocity is zero while both lateral states stay
    free and noisy, so a matched full-state filter is exactly consistent
    with the world it observes.
    """
    return {
        "road": country_road_dict(),
        "rsu": rsu_dict(country_rsu_xyh(), array_m=array, array_n=array,
                        tx_power_dbm=tx_power_dbm),
        "init": {"s": 2.0, "v_s": 10.0, "n": 0.0, "v_n": 0.0,
                 "beta_re": 2e-5, "beta_im": 2e-5},
        "schedule": [{"t_start": 0.0, "t_end": epochs * 0.02 + 1.0,
                      "v_s": 10.0, "v_n": 0.0}],
        "epochs": epochs,
        "mc_runs": runs,
        "seed": seed,
        "tracker": tracker,
        "beam": {"mode": "constant", "gamma": 0.05},
        "world": {"kinematic": "lc", "noise_scale": noise_scale},
        "process_noise": dict(_NOISE_DEFAULT),
    }


def imm_maneuver_scenario(
    which: int = 1,
    runs: int = 200,
    seed: int = 7,
    tracker: str = "imm",
    array: int = 16,
) -> dict:
    """Lane-change maneuvers on the country road at v_s = 5 m/s.

    Scenario 1: lateral velocity +1 m/s during 1.2 s .. 2.4 s.
    Scenario 2: additionally -2 m/s during 2.4 s .. 3.6 s (back across).
    Truth kinematics are deterministic (noise_scale 0): the maneuver is a
    velocity step, which is what the model-probability traces respond to.
    """
    if which == 1:
        schedule = [
            {"t_start": 0.0, "t_end": 1.2, "v_s": 5.0, "v_n": 0.0},
            {"t_start": 1.2, "t_end": 2.4, "v_s": 5.0, "v_n": 1.0},
            {"t_start": 2.4, "t_end": 10.0, "v_s": 5.0, "v_n": 0.0},
        ]
        epochs = 180  # 3.6 s
    elif which == 2:
        schedule = [
            {"t_start": 0.0, "t_end": 1.2, "v_s": 5.0, "v_n": 0.0},
            {"t_start": 1.2, "t_end": 2.4, "v_s": 5.0, "v_n": 1.0},
            {"t_start": 2.4, "t_end": 3.6, "v_s": 5.0, "v_n": -2.0},
            {"t_start": 3.6, "t_end": 10.0, "v_s": 5.0, "v_n": 0.0},
        ]
        epochs = 220  # 4.4 s
    else:
        raise ValueError("which must be 1 or 2")
    return {
        "road": country_road_dict(),
        "rsu": rsu_dict(country_rsu_xyh(), array_m=array, array_n=array),
        "init": {"s": 2.0, "v_s": 5.0, "n": 0.0, "v_n": 0.0,
                 "beta_re": 2e-5, "beta_im": 2e-5},
        "schedule": schedule,
        "epochs": epochs,
        "mc_runs": runs,
        "seed": seed,
        "tracker": tracker,
        "beam": {"mode": "constant", "gamma": 0.05},
        "imm": {"models": ["LK", "LC"],
                "transition": [[0.95, 0.05], [0.05, 0.95]]},
        "world": {"kinematic": "lc", "noise_scale": 0.0},
        "process_noise": dict(_NOISE_DEFAULT),
    }


def roundabout_scenario(
    epochs: int = 250,
    runs: int = 100,
    seed: int = 3,
    tracker: str = "imm",
    array: int = 16,
) -> dict:
    """Pass around the 50 m roundabout with the mast inside the ring."""
    return {
        "road": roundabout_road_dict(),
        "rsu": rsu_dict([25.0, 25.0, 10.0], array_m=array, array_n=array),
        "init": {"s": 2.0, "v_s": 10.0, "n": 0.0, "v_n": 0.0,
                 "beta_re": 2e-5, "beta_im": 2e-5},
        "schedule": [{"t_start": 0.0, "t_end": epochs * 0.02 + 1.0,
                      "v_s": 10.0, "v_n": 0.0}],
        "epochs": epochs,
        "mc_runs": runs,
        "seed": seed,
        "tracker": tracker,
        "beam": {"mode": "constant", "gamma": 0.05},
        "world": {"kinematic": "lc", "noise_scale": 1.0},
        "process_noise": dict(_NOISE_DEFAULT),
    }


def beamwidth_stress_scenario(
    array: int = 32,
    gamma: float = 0.05,
    epochs: int = 250,
    runs: int = 10,
    seed: int = 11,
    beam_mode: str = "dynamic",
) -> dict:
    """Stressed-noise pass bracketing the closest approach to the mast.

    System noise is raised to sigma_s = 0.16 m / sigma_n = 0.0032 m so
    prediction uncertainty in angle space is large where the geometry is
    fastest, which is what dynamic beamwidth has to survive.
    """
    noise = dict(_NOISE_DEFAULT)
    noise["sigma_s"] = 0.16
    noise["sigma_n"] = 0.0032
    return {
        "road": country_road_dict(),
        "rsu": rsu_dict(country_rsu_xyh(), array_m=array, array_n=array),
        "init": {"s": 85.0, "v_s": 10.0, "n": 0.0, "v_n": 0.0,
                 "beta_re": 2e-5, "beta_im": 2e-5},
        "schedule": [{"t_start": 0.0, "t_end": epochs * 0.02 + 1.0,
                      "v_s": 10.0, "v_n": 0.0}],
        "epochs": epochs,
        "mc_runs": runs,
        "seed": seed,
        "tracker": "ekf-lc",
        "beam": {"mode": beam_mode, "gamma": gamma},
        "world": {"kinematic": "lc", "noise_scale": 1.0},
        "process_noise": noise,
    }


PRESETS = {
    "country_lk": country_lk_scenario,
    "imm_scenario1": lambda: imm_maneuver_scenario(1),
    "imm_scenario2": lambda: imm_maneuver_scenario(2),
    "roundabout": roundabout_scenario,
    "beamwidth_stress": beamwidth_stress_scenario,
}
