import numpy as np
import pytest

from polsq.imperfect import DetectorPairModel
from polsq.scenario import load_scenario
from polsq.targetfit import fit_single_beam, fit_two_beam

SINGLE = {"S0": -3.7, "S1": -3.6, "S2": 0.1, "S3": 0.1}
TWO = {"S0": -3.4, "S1": -3.4, "S2": -2.8, "S3": 23.5}


@pytest.fixture(scope="module")
def fits():
    det = DetectorPairModel(1.005, 1.06, extinction_db=30.0)
    one = fit_single_beam(SINGLE, det)
    two = fit_two_beam(TWO, one.detector, one.environment)
    return one, two


def test_fits_reach_targets(fits):
    one, two = fits
    for t in SINGLE:
        assert abs(one.readings[t] - SINGLE[t]) < 0.1
    for t in ("S0", "S2", "S3"):
        assert two.readings[t] == pytest.approx(TWO[t], abs=1e-3)
    assert abs(two.readings["S1"] - TWO["S1"]) < 0.1


def test_committed_scenarios_match_fits(fits):
    one, two = fits
    s5, s6 = load_scenario("paper_fig5"), load_scenario("paper_fig6")
    r5, r6 = s5.resolved, s6.resolved
    assert 10 * np.log10(r5["state"]["v_plus"]) == pytest.approx(one.v_plus_db, abs=1e-3)
    assert s5.detector.dark_noise_db == pytest.approx(one.detector.dark_noise_db, abs=0.01)
    assert s5.environment.hwp_misalignment == pytest.approx(
        one.environment.hwp_misalignment, abs=1e-4)
    assert 10 * np.log10(r6["state"]["v_plus"]) == pytest.approx(two.v_plus_db, abs=1e-3)
    assert 10 * np.log10(r6["state"]["v_minus"]) == pytest.approx(two.v_minus_db, abs=1e-3)
    assert s6.environment.phase_jitter_std == pytest.approx(
        two.environment.phase_jitter_std, abs=1e-4)
