import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_state
from polsq.optics import (
    MeasurementConfig,
    apply_chain,
    apply_element,
    half_wave_plate,
    ideal_config,
    loss,
    measure,
    phase_shifter,
    quarter_wave_plate,
    rotated_basis_correlations,
)
from polsq.polcore import (
    build_example,
    coherent_state,
    from_db,
    stokes_linearized,
)

seeds = st.integers(0, 2**32 - 1)
angles = st.floats(-math.pi, math.pi)


@given(angles)
def test_plates_are_unitary(theta):
    for elem in (half_wave_plate(theta), quarter_wave_plate(theta),
                 phase_shifter(theta)):
        u = elem.matrix
        np.testing.assert_allclose(u @ u.conj().T, np.eye(2), atol=1e-12)


@given(angles, st.complex_numbers(max_magnitude=50), st.complex_numbers(max_magnitude=50))
def test_coherent_states_stay_coherent(theta, ax, ay):
    s = coherent_state(ax, ay)
    for elem in (half_wave_plate(theta), quarter_wave_plate(theta)):
        out = apply_element(s, elem)
        np.testing.assert_allclose(out.cov, np.eye(4), atol=1e-10)


def _same_up_to_global_phase(a, b):
    ref = np.vdot(a, b)
    if abs(ref) < 1e-12:
        return np.allclose(a, b, atol=1e-9)
    return np.allclose(a * ref / abs(ref), b, atol=1e-9)


@given(angles, seeds)
def test_composition(theta, seed):
    s = random_state(np.random.default_rng(seed))
    twice = apply_chain(s, [half_wave_plate(theta)] * 2)
    assert _same_up_to_global_phase(s.alpha, twice.alpha)
    four = apply_chain(s, [quarter_wave_plate(theta)] * 4)
    assert _same_up_to_global_phase(s.alpha, four.alpha)
    np.testing.assert_allclose(four.lab_cov(), s.lab_cov(), atol=1e-8)


def test_hwp_zero_flips_y():
    s = build_example(2, 0.5, 2.0, 3.0, phi=0.4)
    out = apply_element(s, half_wave_plate(0.0))
    np.testing.assert_allclose(out.alpha, [s.alpha_x, -s.alpha_y])
    a, b = stokes_linearized(s), stokes_linearized(out)
    np.testing.assert_allclose(b.normalized[:2], a.normalized[:2], rtol=1e-12)


def test_hwp_22_5_reads_s2():
    s = build_example(2, from_db(-3), from_db(3), 1000.0)
    out = apply_element(s, half_wave_plate(math.pi / 8))
    rec = measure(s, ideal_config("S2"))
    assert rec.normalized == pytest.approx(stokes_linearized(s).normalized[2],
                                           rel=1e-12)
    assert out.mean_photon_number == pytest.approx(s.mean_photon_number)


@given(seeds)
def test_chains_match_algebra(seed):
    s = random_state(np.random.default_rng(seed))
    v = stokes_linearized(s).normalized
    for j, t in enumerate(("S0", "S1", "S2", "S3")):
        assert measure(s, ideal_config(t)).normalized == pytest.approx(
            v[j], rel=1e-9, abs=1e-9)


@given(seeds)
def test_s0_invariant_across_chains(seed):
    s = random_state(np.random.default_rng(seed))
    sums = [measure(s, MeasurementConfig(t, c.hwp_angle, c.qwp_angle, "sum")).variance
            for t in ("S1", "S2", "S3") for c in [ideal_config(t)]]
    np.testing.assert_allclose(sums, sums[0], rtol=1e-9)


def test_s3_chain_mean_sign():
    s = coherent_state(1.0, 1j)
    rec = measure(s, ideal_config("S3"))
    assert rec.mean == pytest.approx(-stokes_linearized(s).mean[3])


@given(seeds, st.floats(0.01, 1.0))
def test_loss_interpolation(seed, eta):
    s = random_state(np.random.default_rng(seed))
    v = stokes_linearized(s).normalized
    w = stokes_linearized(apply_element(s, loss(eta))).normalized
    np.testing.assert_allclose(w, eta * v + 1 - eta, rtol=1e-9, atol=1e-9)
    assert np.all(np.abs(w - 1) <= np.abs(v - 1) + 1e-12)


def test_loss_validation():
    with pytest.raises(ValueError):
        loss(1.2)
    with pytest.raises(ValueError):
        MeasurementConfig("S4")
    with pytest.raises(ValueError):
        MeasurementConfig("S1", channel="product")


def test_no_light_rejected():
    with pytest.raises(ValueError):
        measure(coherent_state(0.0, 0.0), ideal_config("S1"))


def test_with_offsets_touches_present_plates_only():
    c = ideal_config("S2").with_offsets(hwp=0.01, qwp=0.02)
    assert c.hwp_angle == pytest.approx(math.pi / 8 + 0.01)
    assert c.qwp_angle is None


def test_rotated_basis_two_mode_squeezing():
    # Example 2 at 45 degrees: squeezed plus coherent beams split into
    # correlated modes whose joint amplitude variance is the squeezed one
    vp = from_db(-3)
    s = build_example(2, vp, 1 / vp, 100.0)
    corr = rotated_basis_correlations(s, math.pi / 4)
    assert corr.joint["amplitude_difference"] == pytest.approx(vp, rel=1e-12)
    assert corr.joint["amplitude_sum"] == pytest.approx(1.0, rel=1e-12)
    assert corr.mode1[0, 0] == pytest.approx((vp + 1) / 2, rel=1e-12)
    assert corr.cross[0, 0] == pytest.approx((1 - vp) / 2, rel=1e-12)
