"""
Detector and environment imperfections for the balanced Stokes chains.

The AC signal of a chain is modelled as the in-band photocurrent
fluctuation

    X = (1 + e) * w(phi) . q  +  m(phi) * ((1 + e)**2 - 1)  +  dark

where ``q`` are the state's quadrature fluctuations, ``phi`` is the residual
relative phase between the two polarization modes (quasi-static, one value
per shot), ``e`` is the relative amplitude fluctuation of the laser, ``w`` is
the channel's linear form after wave-plates, extinction leakage, AC gains
and saturation, and ``m`` is the channel's mean photocurrent. The slowly
varying part of ``m(phi)`` is outside the analysis band and is dropped.

Variances are normalized by the shot-noise level derived from the
gain-corrected sum of the two DC signals. AC gains are normalized to a mean
of one, so with ``e = (g1 - g2) / (g1 + g2)`` the difference channel picks
up a fraction ``e`` of the sum fluctuations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .calib import CalibrationRecord, combine_dc
from .optics import (
    MeasurementConfig,
    apply_element,
    measure,
    phase_shifter,
    real_representation,
)
from .polcore import frame_rotation, stokes_linearized, to_db

__all__ = [
    "DetectorPairModel",
    "EnvironmentModel",
    "dark_clearance_for_excess",
    "ImperfectRecord",
    "MECHANISMS",
    "measure_imperfect",
    "phase_sweep",
    "mixing_sensitivity",
    "MIN_SHOTS",
    "synthetic_calibration",
]

MIN_SHOTS = 10_000
_HERMITE_NODES = 48
_CHUNK = 1 << 15
_MIN_COMPRESSION = 0.1


def dark_clearance_for_excess(excess_db):
    """Dark-noise clearance (dB below shot noise) that raises a coherent
    reading by ``excess_db``."""
    return -10.0 * math.log10(10.0 ** (excess_db / 10.0) - 1.0)


@dataclass(frozen=True)
class DetectorPairModel:
    """Balanced detector pair.

    Parameters
    ----------
    dc_gain_ratio, ac_gain_ratio : float
        Gain of detector 2 relative to detector 1.
    dark_noise_db : float or None
        Electronic noise clearance below the shot-noise level, in dB.
        ``None`` disables dark noise.
    saturation_dc : float or None
        DC level (photon-number units) at which the AC power response is
        halved. ``None`` disables saturation.
    knee_sharpness : float
        Exponent ``k`` of the compression ``1 / (1 + (dc / saturation_dc)**k)``.
    extinction_db : float or None
        Polarization extinction of the beam splitter ports; a fraction
        ``10**(-extinction_db / 10)`` of each port reaches the other detector.
    """

    dc_gain_ratio: float = 1.0
    ac_gain_ratio: float = 1.0
    dark_noise_db: float | None = None
    saturation_dc: float | None = None
    knee_sharpness: float = 4.0
    extinction_db: float | None = None

    def __post_init__(self):
        if self.dc_gain_ratio <= 0 or self.ac_gain_ratio <= 0:
            raise ValueError("detector gains must be positive")
        if self.saturation_dc is not None and self.saturation_dc <= 0:
            raise ValueError("saturation level must be positive")
        if self.knee_sharpness <= 0:
            raise ValueError("knee sharpness must be positive")

    @classmethod
    def ideal(cls):
        return cls()

    @property
    def ac_gains(self):
        r = self.ac_gain_ratio
        return 2.0 / (1.0 + r), 2.0 * r / (1.0 + r)

    @property
    def imbalance(self):
        g1, g2 = self.ac_gains
        return (g1 - g2) / (g1 + g2)

    @property
    def leakage(self):
        if self.extinction_db is None:
            return 0.0
        return 10.0 ** (-self.extinction_db / 10.0)

    def compression(self, dc):
        """AC power compression factor in (0, 1] at a DC level."""
        dc = np.asarray(dc, dtype=float)
        if self.saturation_dc is None:
            return np.ones_like(dc)
        return 1.0 / (1.0 + (dc / self.saturation_dc) ** self.knee_sharpness)

    def dark_power(self, shot_noise):
        if self.dark_noise_db is None:
            return 0.0
        return shot_noise * 10.0 ** (-self.dark_noise_db / 10.0)

    def ac_power(self, dc, shot_slope=1.0):
        """Mean AC noise power of a coherent beam on one detector."""
        dc = np.asarray(dc, dtype=float)
        return shot_slope * dc * self.compression(dc)


@dataclass(frozen=True)
class EnvironmentModel:
    """Residual phase jitter, wave-plate misalignment and laser noise.

    Angles are in radians. ``phase_offset`` is the mean relative phase error
    around which the jitter is Gaussian.
    """

    phase_jitter_std: float = 0.0
    hwp_misalignment: float = 0.0
    qwp_misalignment: float = 0.0
    power_fluctuation_rel: float = 0.0
    phase_offset: float = 0.0

    def __post_init__(self):
        for name in ("phase_jitter_std", "power_fluctuation_rel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


# cumulative order in which mechanisms are switched on for the breakdown
MECHANISMS = ("misalignment", "phase_jitter", "gain_imbalance", "extinction",
              "saturation", "power_fluctuation", "dark_noise")


def _staged_models(det, env):
    ideal_det = DetectorPairModel(dc_gain_ratio=det.dc_gain_ratio,
                                  knee_sharpness=det.knee_sharpness)
    ideal_env = EnvironmentModel()
    stages = []
    d, e = ideal_det, ideal_env
    for name in MECHANISMS:
        if name == "misalignment":
            e = replace(e, hwp_misalignment=env.hwp_misalignment,
                        qwp_misalignment=env.qwp_misalignment)
        elif name == "phase_jitter":
            e = replace(e, phase_jitter_std=env.phase_jitter_std,
                        phase_offset=env.phase_offset)
        elif name == "gain_imbalance":
            d = replace(d, ac_gain_ratio=det.ac_gain_ratio)
        elif name == "extinction":
            d = replace(d, extinction_db=det.extinction_db)
        elif name == "saturation":
            d = replace(d, saturation_dc=det.saturation_dc)
        elif name == "power_fluctuation":
            e = replace(e, power_fluctuation_rel=env.power_fluctuation_rel)
        elif name == "dark_noise":
            d = replace(d, dark_noise_db=det.dark_noise_db)
        stages.append((name, d, e))
    return stages


def _rotate_rows(rows, angles):
    """``rows[i] @ R(angles[i])`` for 2-vectors."""
    c, s = np.cos(angles), np.sin(angles)
    a, b = rows[:, 0], rows[:, 1]
    return np.stack([a * c + b * s, b * c - a * s], axis=1)


@dataclass
class _Channel:
    forms: np.ndarray       # (n_phi, 4) linear forms on state.cov's frame
    mean: np.ndarray        # (n_phi,) channel mean photocurrent
    dc: np.ndarray          # (n_phi, 2) detector DC levels
    compression: np.ndarray  # (n_phi, 2)


def _channel(state, config, det, env, phis):
    """Channel linear forms for each relative-phase error in ``phis``."""
    cfg = config.with_offsets(env.hwp_misalignment, env.qwp_misalignment)
    u = np.eye(2, dtype=complex)
    for elem in cfg.elements():
        u = elem.matrix @ u
    m = real_representation(u)
    phis = np.atleast_1d(np.asarray(phis, dtype=float))

    alpha = np.stack([np.full(phis.shape, state.alpha_x),
                      state.alpha_y * np.exp(1j * phis)], axis=1)
    beta = alpha @ u.T

    theta_x, theta_y = state.frame_phases()
    forms = np.zeros((len(phis), 2, 4))
    for k in range(2):
        c = np.zeros((len(phis), 4))
        c[:, 2 * k] = beta[:, k].real
        c[:, 2 * k + 1] = beta[:, k].imag
        lab_in = c @ m
        forms[:, k, :2] = lab_in[:, :2] @ frame_rotation(theta_x, 0.0)[:2, :2]
        forms[:, k, 2:] = _rotate_rows(lab_in[:, 2:], theta_y + phis)

    n = np.abs(beta) ** 2
    lk = det.leakage
    mix = np.array([[1.0 - lk, lk], [lk, 1.0 - lk]])
    dc = n @ mix.T
    forms = np.einsum("kl,plj->pkj", mix, forms)

    comp = det.compression(dc)
    g = np.array(det.ac_gains)
    sign = np.array([1.0, 1.0 if cfg.channel == "sum" else -1.0])
    amp = g * sign * np.sqrt(comp)
    return _Channel(
        forms=np.einsum("pk,pkj->pj", amp, forms),
        mean=np.einsum("pk,pk->p", amp, dc),
        dc=dc,
        compression=comp,
    )


def _shot_reference(state, config, det):
    """Shot noise from the gain-corrected sum of the DC signals."""
    cfg_mean = measure(state, config).mean_pair
    return combine_dc(cfg_mean[0], det.dc_gain_ratio * cfg_mean[1],
                      det.dc_gain_ratio)


def _analytic(state, config, det, env):
    sigma = env.phase_jitter_std
    if sigma > 0:
        x, w = np.polynomial.hermite_e.hermegauss(_HERMITE_NODES)
        phis = env.phase_offset + sigma * x
        weights = w / w.sum()
    else:
        phis = np.array([env.phase_offset])
        weights = np.ones(1)
    ch = _channel(state, config, det, env, phis)
    quad = np.einsum("pi,ij,pj->p", ch.forms, state.cov, ch.forms)
    s2 = env.power_fluctuation_rel ** 2
    second = (1.0 + s2) * quad + (4.0 * s2 + 3.0 * s2 * s2) * ch.mean ** 2
    first = s2 * ch.mean
    shot = _shot_reference(state, config, det)
    var = weights @ second - (weights @ first) ** 2 + det.dark_power(shot)
    return float(var), shot, ch


def _monte_carlo(state, config, det, env, shots, seed):
    rng = np.random.default_rng(seed)
    w, v = np.linalg.eigh(state.cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    shot = _shot_reference(state, config, det)
    dark = det.dark_power(shot)
    samples = np.empty(shots)
    min_comp = 1.0
    for start in range(0, shots, _CHUNK):
        size = min(_CHUNK, shots - start)
        phis = env.phase_offset + env.phase_jitter_std * rng.standard_normal(size)
        eps = env.power_fluctuation_rel * rng.standard_normal(size)
        q = rng.standard_normal((size, 4)) @ root.T
        d = rng.standard_normal((size, 2)) * math.sqrt(dark / 2.0)
        ch = _channel(state, config, det, env, phis)
        min_comp = min(min_comp, float(ch.compression.min()))
        scale = 1.0 + eps
        samples[start:start + size] = (
            scale * np.einsum("pj,pj->p", ch.forms, q)
            + ch.mean * (scale ** 2 - 1.0)
            + d.sum(axis=1)
        )
    centered = samples - samples.mean()
    var = float(centered @ centered / (shots - 1))
    m4 = float(np.mean(centered ** 4))
    stderr = math.sqrt(max(m4 - var ** 2, 0.0) / shots)
    return var, stderr, shot, min_comp


@dataclass(frozen=True)
class ImperfectRecord:
    """Outcome of an imperfect measurement; variances in shot-noise units
    except ``variance``."""

    target: str
    channel: str
    mode: str
    variance: float
    shot_noise: float
    normalized: float
    stderr: float | None
    ideal: float
    breakdown: dict = field(default_factory=dict)
    min_compression: float = 1.0
    shots: int | None = None
    seed: int | None = None

    @property
    def db(self):
        return float(to_db(self.normalized))

    @property
    def ideal_db(self):
        return float(to_db(self.ideal))

    @property
    def saturated(self):
        """Compression outside the model's validity range."""
        return self.min_compression < _MIN_COMPRESSION


def measure_imperfect(state, config, det=None, env=None, mode="analytic",
                      shots=100_000, seed=None, breakdown=True):
    """Measure a Stokes parameter through an imperfect chain.

    ``mode="analytic"`` averages the channel variance over the Gaussian
    phase jitter by Gauss-Hermite quadrature; ``mode="monte_carlo"`` samples
    ``shots`` realizations from ``seed`` and also reports the standard error
    of the normalized variance. The per-mechanism ``breakdown`` is always
    analytic: mechanisms are switched on in the order of :data:`MECHANISMS`
    and each entry is the resulting change of the normalized variance.
    """
    if not isinstance(config, MeasurementConfig):
        raise TypeError("expected a MeasurementConfig")
    det = det or config.detector or DetectorPairModel()
    env = env or EnvironmentModel()
    ideal = measure(state, config).normalized

    parts = {}
    if breakdown:
        prev = ideal
        for name, d, e in _staged_models(det, env):
            v = _analytic(state, config, d, e)[0] / _shot_reference(state, config, d)
            parts[name] = v - prev
            prev = v

    if mode == "analytic":
        var, shot, ch = _analytic(state, config, det, env)
        return ImperfectRecord(
            target=config.target, channel=config.channel, mode=mode,
            variance=var, shot_noise=shot, normalized=var / shot,
            stderr=None, ideal=ideal, breakdown=parts,
            min_compression=float(ch.compression.min()),
        )
    if mode == "monte_carlo":
        if shots < MIN_SHOTS:
            raise ValueError(f"monte carlo needs at least {MIN_SHOTS} shots")
        if seed is None:
            raise ValueError("monte carlo needs an explicit seed")
        var, err, shot, comp = _monte_carlo(state, config, det, env,
                                            int(shots), seed)
        return ImperfectRecord(
            target=config.target, channel=config.channel, mode=mode,
            variance=var, shot_noise=shot, normalized=var / shot,
            stderr=err / shot, ideal=ideal, breakdown=parts,
            min_compression=comp, shots=int(shots), seed=seed,
        )
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class SweepRow:
    phi: float
    means: np.ndarray
    linearized: np.ndarray
    normalized: float

    @property
    def db(self):
        return float(to_db(self.normalized))


def phase_sweep(state, config, det=None, env=None, phi_grid=()):
    """Measured variance and Stokes means as the relative phase is detuned."""
    rows = []
    for phi in phi_grid:
        shifted = apply_element(state, phase_shifter(phi))
        est = stokes_linearized(shifted)
        rec = measure_imperfect(shifted, config, det, env, breakdown=False)
        rows.append(SweepRow(float(phi), est.mean, est.normalized,
                             rec.normalized))
    return rows


@dataclass(frozen=True)
class SensitivityRow:
    value: float
    normalized: float
    ideal: float

    @property
    def db(self):
        return float(to_db(self.normalized))

    @property
    def degradation_db(self):
        return self.db - float(to_db(self.ideal))


SENSITIVITY_PARAMETERS = ("hwp", "qwp", "ac_gain", "jitter")


def mixing_sensitivity(state, config, det=None, env=None, parameter="hwp",
                       grid=(0.0,)):
    """Measured variance as one imperfection is swept over ``grid``.

    ``parameter`` is ``"hwp"`` or ``"qwp"`` (misalignment in radians),
    ``"ac_gain"`` (AC gain ratio) or ``"jitter"`` (phase jitter std).
    Everything else is held at ``det`` and ``env``.
    """
    det = det or config.detector or DetectorPairModel()
    env = env or EnvironmentModel()
    if parameter not in SENSITIVITY_PARAMETERS:
        raise ValueError(f"unknown sensitivity parameter {parameter!r}")
    rows = []
    for value in grid:
        d, e = det, env
        if parameter == "hwp":
            e = replace(env, hwp_misalignment=float(value))
        elif parameter == "qwp":
            e = replace(env, qwp_misalignment=float(value))
        elif parameter == "ac_gain":
            d = replace(det, ac_gain_ratio=float(value))
        else:
            e = replace(env, phase_jitter_std=float(value))
        rec = measure_imperfect(state, config, d, e, breakdown=False)
        rows.append(SensitivityRow(float(value), rec.normalized, rec.ideal))
    return rows


def synthetic_calibration(det, dc_levels, shot_slope=1.0, dark_power=0.0,
                          rel_noise=0.01, rng=None):
    """AC-noise-power-versus-DC record for a coherent beam on detector 1.

    The true shot noise is ``shot_slope * dc``; the record adds the dark
    power, the detector's saturation compression and multiplicative
    Gaussian measurement noise of relative size ``rel_noise``.
    """
    rng = np.random.default_rng(rng)
    dc = np.asarray(dc_levels, dtype=float)
    mean = det.ac_power(dc, shot_slope) + dark_power
    ac = mean * (1.0 + rel_noise * rng.standard_normal(dc.shape))
    return CalibrationRecord(dc, ac, dark_power if dark_power > 0 else None,
                             {"source": "synthetic"})
