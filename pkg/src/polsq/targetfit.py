"""
Fit free imperfection parameters so that modelled readings hit target dB
values.

Only the parameters the lab does not report are fitted: input quadrature
variances, residual phase jitter, wave-plate misalignment and the detector
dark-noise level. Gain ratios are held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .imperfect import (
    DetectorPairModel,
    EnvironmentModel,
    dark_clearance_for_excess,
    measure_imperfect,
)
from .optics import MeasurementConfig, ideal_config
from .polcore import build_example, from_db

__all__ = ["FitOutcome", "chains", "readings", "fit_single_beam",
           "fit_two_beam"]

ALPHA = 1000.0


def chains(bright_on_detector_2=True):
    """Measurement chains; optionally route the S2 beam to detector 2."""
    out = {t: ideal_config(t) for t in ("S0", "S1", "S2", "S3")}
    if bright_on_detector_2:
        out["S2"] = MeasurementConfig("S2", -np.pi / 8, None, "difference")
    return out


def readings(state, det, env, configs):
    return {t: measure_imperfect(state, c, det, env, breakdown=False).db
            for t, c in configs.items()}


@dataclass(frozen=True)
class FitOutcome:
    v_plus_db: float
    v_minus_db: float
    detector: DetectorPairModel
    environment: EnvironmentModel
    readings: dict
    targets: dict


def fit_single_beam(targets, det, v_minus_db=23.0, configs=None):
    """Fit input squeezing, half-wave-plate misalignment and dark noise to a
    single squeezed beam with vacuum in the orthogonal mode.

    ``targets`` maps S0..S3 to dB readings.
    """
    configs = configs or chains()

    def model(p):
        vp_db, hwp_deg, excess_db = p
        state = build_example(1, from_db(vp_db), from_db(v_minus_db), ALPHA)
        d = replace(det, dark_noise_db=dark_clearance_for_excess(excess_db))
        e = EnvironmentModel(hwp_misalignment=np.deg2rad(hwp_deg),
                             qwp_misalignment=np.deg2rad(hwp_deg))
        return state, d, e

    def resid(p):
        got = readings(*model(p), configs)
        return [got[t] - targets[t] for t in targets]

    sol = least_squares(resid, x0=[targets["S0"], 1.0, 0.1],
                        bounds=([-10.0, 0.0, 1e-4], [0.0, 5.0, 1.0]))
    state, d, e = model(sol.x)
    return FitOutcome(float(sol.x[0]), v_minus_db, d, e,
                      readings(state, d, e, configs), dict(targets))


def fit_two_beam(targets, det, env, configs=None):
    """Fit input squeezing, anti-squeezing and phase jitter to two equally
    squeezed, phase-locked beams; misalignment and detector are fixed."""
    configs = configs or chains()
    fit_targets = {t: targets[t] for t in ("S0", "S2", "S3")}

    def model(p):
        vp_db, vm_db, jitter_deg = p
        state = build_example(3, from_db(vp_db), from_db(vm_db), ALPHA)
        e = replace(env, phase_jitter_std=np.deg2rad(jitter_deg))
        return state, det, e

    def resid(p):
        got = readings(*model(p), configs)
        return [got[t] - fit_targets[t] for t in fit_targets]

    sol = least_squares(resid, x0=[targets["S0"], targets["S3"], 1.0],
                        bounds=([-10.0, 0.0, 0.0], [0.0, 40.0, 10.0]))
    state, d, e = model(sol.x)
    return FitOutcome(float(sol.x[0]), float(sol.x[1]), d, e,
                      readings(state, d, e, configs), dict(targets))
