"""
Shot-noise calibration: linear fit of AC noise power against DC level.

Records are read from CSV files with a ``dc,ac_power`` header. Comment lines
of the form ``# key=value`` carry metadata; ``# dark_noise=<value>`` gives
the detector's dark-noise power in the AC power units.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CalibrationError",
    "CalibrationRecord",
    "RegionPolicy",
    "ShotNoiseFit",
    "combine_dc",
    "fit_shot_noise",
    "read_record",
    "write_record",
    "format_report",
]

MIN_SAMPLES = 5
MIN_RETAINED = 3


class CalibrationError(ValueError):
    pass


def combine_dc(dc_1, dc_2, dc_gain_ratio):
    """Sum two DC signals with detector 2 referred to detector 1's scale."""
    if dc_gain_ratio <= 0:
        raise ValueError("DC gain ratio must be positive")
    return dc_1 + dc_2 / dc_gain_ratio


@dataclass(frozen=True)
class CalibrationRecord:
    dc: np.ndarray
    ac_power: np.ndarray
    dark_noise_power: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        dc = np.asarray(self.dc, dtype=float).ravel()
        ac = np.asarray(self.ac_power, dtype=float).ravel()
        if dc.shape != ac.shape:
            raise CalibrationError("dc and ac_power differ in length")
        if len(dc) < MIN_SAMPLES:
            raise CalibrationError(
                f"need at least {MIN_SAMPLES} samples, got {len(dc)}"
            )
        if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(ac))):
            raise CalibrationError("non-finite calibration samples")
        if np.any(dc < 0):
            raise CalibrationError("DC levels must be nonnegative")
        order = np.argsort(dc, kind="stable")
        object.__setattr__(self, "dc", dc[order])
        object.__setattr__(self, "ac_power", ac[order])

    def scaled(self, dc_scale, ac_scale):
        dark = self.dark_noise_power
        return CalibrationRecord(
            self.dc * dc_scale, self.ac_power * ac_scale,
            None if dark is None else dark * ac_scale, dict(self.metadata),
        )


@dataclass(frozen=True)
class RegionPolicy:
    """Selection of the linear middle region.

    Samples whose AC power is less than ``1 / dark_fraction`` times the dark
    noise are dropped, then the highest DC samples are dropped while their
    local slope (least squares over ``window`` neighbours) is below
    ``slope_ratio`` times the median local slope.
    """

    dark_fraction: float = 0.1
    slope_ratio: float = 0.9
    window: int = 5
    weighted: bool = False


@dataclass(frozen=True)
class ShotNoiseFit:
    slope: float
    intercept: float
    selected: np.ndarray
    dc: np.ndarray
    ac_power: np.ndarray
    residuals: np.ndarray

    @property
    def n_selected(self):
        return int(self.selected.sum())

    @property
    def dc_range(self):
        sel = self.dc[self.selected]
        return float(sel.min()), float(sel.max())

    @property
    def rms_residual(self):
        return float(np.sqrt(np.mean(self.residuals ** 2)))

    def shot_noise(self, dc):
        """Shot-noise power predicted for a (summed) DC level."""
        return self.slope * np.asarray(dc, dtype=float)

    def __call__(self, dc):
        return self.shot_noise(dc)


def _local_slopes(x, y, window):
    half = max(1, window // 2)
    out = np.empty(len(x))
    for i in range(len(x)):
        lo, hi = max(0, i - half), min(len(x), i + half + 1)
        if hi - lo < 2:
            out[i] = np.nan
            continue
        out[i] = np.polyfit(x[lo:hi], y[lo:hi], 1)[0]
    return out


def _select(rec, policy):
    keep = np.ones(len(rec.dc), dtype=bool)
    if rec.dark_noise_power is not None and rec.dark_noise_power > 0:
        keep &= rec.dark_noise_power <= policy.dark_fraction * rec.ac_power
    idx = np.flatnonzero(keep)
    if len(idx) < MIN_RETAINED:
        raise CalibrationError("no valid region: dark noise dominates")

    # the median reference is iterated to a fixed point, trimming from the
    # full record each time, so the cut does not depend on how many
    # saturated samples lie above it
    slopes = _local_slopes(rec.dc[idx], rec.ac_power[idx], policy.window)
    median = float(np.nanmedian(slopes))
    hi = len(idx)
    for _ in range(len(idx)):
        if not median > 0:
            raise CalibrationError(
                "no valid region: AC power does not grow with DC level"
            )
        hi = len(idx)
        while hi > 0 and slopes[hi - 1] < policy.slope_ratio * median:
            hi -= 1
        if hi < MIN_RETAINED:
            raise CalibrationError("no valid region: saturated throughout")
        new = float(np.nanmedian(slopes[:hi]))
        if new == median:
            break
        median = new
    sel = np.zeros(len(rec.dc), dtype=bool)
    sel[idx[:hi]] = True
    return sel


def fit_shot_noise(rec, policy=None):
    """Fit ``ac_power = slope * dc + intercept`` on the linear middle region.

    Raises :class:`CalibrationError` when fewer than three samples survive
    the region selection or the data do not increase with DC level.
    """
    policy = policy or RegionPolicy()
    sel = _select(rec, policy)
    x, y = rec.dc[sel], rec.ac_power[sel]
    if len(x) < MIN_RETAINED:
        raise CalibrationError("fewer than three samples in the fit region")
    w = 1.0 / np.abs(y) if policy.weighted else None
    slope, intercept = np.polyfit(x, y, 1, w=w)
    if not slope > 0:
        raise CalibrationError("fitted slope is not positive")
    resid = rec.ac_power - (slope * rec.dc + intercept)
    return ShotNoiseFit(float(slope), float(intercept), sel, rec.dc,
                        rec.ac_power, resid[sel])


def read_record(path_or_text):
    """Parse a calibration CSV from a path or a file-like object."""
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    else:
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    meta, rows = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                meta[key.strip()] = value.strip()
            continue
        rows.append((lineno, line))
    if not rows:
        raise CalibrationError("calibration file has no data")
    reader = csv.reader(io.StringIO("\n".join(r[1] for r in rows)))
    header = [h.strip() for h in next(reader)]
    if header[:2] != ["dc", "ac_power"]:
        raise CalibrationError(
            f"line {rows[0][0]}: expected header 'dc,ac_power', got {header}"
        )
    dc, ac = [], []
    for (lineno, _), fields in zip(rows[1:], reader):
        try:
            dc.append(float(fields[0]))
            ac.append(float(fields[1]))
        except (ValueError, IndexError):
            raise CalibrationError(f"line {lineno}: malformed sample {fields}")
    dark = meta.pop("dark_noise", None)
    try:
        dark = None if dark is None else float(dark)
    except ValueError:
        raise CalibrationError(f"bad dark_noise annotation {dark!r}")
    return CalibrationRecord(np.array(dc), np.array(ac), dark, meta)


def write_record(rec, path):
    with open(path, "w", newline="") as fh:
        for key, value in rec.metadata.items():
            fh.write(f"# {key}={value}\n")
        if rec.dark_noise_power is not None:
            fh.write(f"# dark_noise={rec.dark_noise_power!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dc", "ac_power"])
        for x, y in zip(rec.dc, rec.ac_power):
            writer.writerow([repr(float(x)), repr(float(y))])


def format_report(fit, rec=None):
    lo, hi = fit.dc_range
    lines = [
        "# shot-noise calibration fit",
        f"slope: {fit.slope:.10g}",
        f"intercept: {fit.intercept:.10g}",
        f"samples_total: {len(fit.dc)}",
        f"samples_selected: {fit.n_selected}",
        f"dc_range_selected: {lo:.10g} {hi:.10g}",
        f"rms_residual: {fit.rms_residual:.6g}",
    ]
    if rec is not None:
        if rec.dark_noise_power is not None:
            lines.append(f"dark_noise: {rec.dark_noise_power:.10g}")
        for key, value in rec.metadata.items():
            lines.append(f"meta.{key}: {value}")
    mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
    lines.append(f"shot_noise_at_{mid:.6g}: {fit.shot_noise(mid):.10g}")
    return "\n".join(lines) + "\n"
