import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polsq.calib import (
    CalibrationError,
    CalibrationRecord,
    RegionPolicy,
    combine_dc,
    fit_shot_noise,
    format_report,
    read_record,
    write_record,
)
from polsq.imperfect import DetectorPairModel, synthetic_calibration
from polsq.polcore import to_db

DET = DetectorPairModel(saturation_dc=1e4, knee_sharpness=4.0)
LEVELS = np.logspace(0, 5, 50)


def test_exact_linear_data():
    dc = np.linspace(1, 100, 20)
    fit = fit_shot_noise(CalibrationRecord(dc, 2 * dc))
    assert fit.slope == pytest.approx(2.0, rel=1e-12)
    assert fit.intercept == pytest.approx(0.0, abs=1e-10)
    assert fit.selected.all()


def test_combine_dc():
    assert combine_dc(1.0, 1.005, 1.005) == pytest.approx(2.0)
    assert combine_dc(0.0, 2.0, 2.0) == 1.0
    with pytest.raises(ValueError):
        combine_dc(1.0, 1.0, 0.0)


def test_all_saturated():
    dc = np.logspace(5, 7, 12)
    rec = CalibrationRecord(dc, DET.ac_power(dc, 2.0))
    with pytest.raises(CalibrationError, match="no valid region"):
        fit_shot_noise(rec)


def test_dark_noise_dominated():
    dc = np.linspace(1, 10, 8)
    rec = CalibrationRecord(dc, 2 * dc + 1000.0, dark_noise_power=1000.0)
    with pytest.raises(CalibrationError):
        fit_shot_noise(rec)


def test_too_few_samples():
    with pytest.raises(CalibrationError):
        CalibrationRecord([1, 2, 3, 4], [1, 2, 3, 4])
    with pytest.raises(CalibrationError):
        CalibrationRecord([-1, 2, 3, 4, 5], [1, 2, 3, 4, 5])


def test_flat_data_rejected():
    with pytest.raises(CalibrationError):
        fit_shot_noise(CalibrationRecord(np.arange(1, 9.0), np.ones(8)))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_within_calibration_error(seed):
    rec = synthetic_calibration(DET, LEVELS, 2.0, 20.0, 0.01, seed)
    fit = fit_shot_noise(rec)
    lo, hi = fit.dc_range
    dc = np.logspace(np.log10(max(lo, 10.0)), np.log10(hi), 10)
    err = np.abs(to_db(fit.shot_noise(dc)) - to_db(2.0 * dc))
    assert err.max() < 0.2


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_scale_equivariance(a, b, seed):
    rec = synthetic_calibration(DET, LEVELS, 2.0, 20.0, 0.01, seed)
    fit = fit_shot_noise(rec)
    scaled = fit_shot_noise(rec.scaled(a, b))
    assert scaled.slope == pytest.approx(fit.slope * b / a, rel=1e-8)
    assert scaled.intercept == pytest.approx(fit.intercept * b, rel=1e-6,
                                             abs=1e-9 * b)
    np.testing.assert_array_equal(scaled.selected, fit.selected)
    dc = np.array([30.0, 300.0])
    np.testing.assert_allclose(to_db(scaled.shot_noise(dc * a)) - to_db(b),
                               to_db(fit.shot_noise(dc)), atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_region_stability(seed, extra):
    # the record already runs through the knee; more points above it must
    # not move the fit
    rng = np.random.default_rng(seed)
    base = synthetic_calibration(DET, LEVELS, 2.0, 20.0, 0.01, rng)
    fit = fit_shot_noise(base)
    high = np.logspace(4.3, 6.0, extra)
    ac = DET.ac_power(high, 2.0) + 20.0
    more = CalibrationRecord(np.r_[base.dc, high], np.r_[base.ac_power, ac],
                             base.dark_noise_power)
    assert fit_shot_noise(more).slope == pytest.approx(fit.slope, rel=0.01)


def test_weighted_fit():
    rec = synthetic_calibration(DET, LEVELS, 2.0, 20.0, 0.01, 7)
    fit = fit_shot_noise(rec, RegionPolicy(weighted=True))
    assert fit.slope == pytest.approx(2.0, rel=0.02)


def test_csv_round_trip(tmp_path):
    rec = synthetic_calibration(DET, LEVELS, 2.0, 20.0, 0.01, 3)
    path = tmp_path / "cal.csv"
    write_record(rec, path)
    back = read_record(path)
    np.testing.assert_array_equal(back.dc, rec.dc)
    np.testing.assert_array_equal(back.ac_power, rec.ac_power)
    assert back.dark_noise_power == rec.dark_noise_power
    assert back.metadata == {"source": "synthetic"}


def test_csv_errors_report_line():
    with pytest.raises(CalibrationError, match="line 2"):
        read_record(io.StringIO("# dark_noise=1\nx,y\n1,2\n"))
    text = "dc,ac_power\n1,2\n2,4\nthree,6\n4,8\n5,10\n"
    with pytest.raises(CalibrationError, match="line 4"):
        read_record(io.StringIO(text))
    with pytest.raises(CalibrationError):
        read_record(io.StringIO("# only comments\n"))


def test_report_lists_fit():
    rec = synthetic_calibration(DET, LEVELS, 2.0, 20.0, 0.01, 3)
    text = format_report(fit_shot_noise(rec), rec)
    assert text.startswith("# shot-noise calibration fit\nslope: ")
    assert "dark_noise: 20" in text and "meta.source: synthetic" in text
