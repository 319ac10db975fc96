"""Random physical states for property tests."""

import numpy as np

from polsq.optics import real_representation
from polsq.polcore import TwoModeGaussianState


def random_unitary(rng):
    z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_lab_cov(rng, max_r=1.0, max_thermal=0.5, correlated=True):
    """Lab covariance ``S diag(nu) S^T`` with random passive and squeezing
    symplectics; every output satisfies the uncertainty principle."""
    nu = 1.0 + rng.uniform(0.0, max_thermal, size=2)
    cov = np.diag(np.repeat(nu, 2))
    r = rng.uniform(0.0, max_r, size=2)
    sq = np.diag([np.exp(-r[0]), np.exp(r[0]), np.exp(-r[1]), np.exp(r[1])])
    rot = real_representation(np.diag(np.exp(1j * rng.uniform(0, 2 * np.pi, 2))))
    s = rot @ sq
    if correlated:
        s = real_representation(random_unitary(rng)) @ s
    return s @ cov @ s.T


def random_state(rng, alpha_range=(0.5, 50.0), correlated=True, **kw):
    mag = rng.uniform(*alpha_range, size=2)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    ax, ay = mag * np.exp(1j * ph)
    return TwoModeGaussianState.from_lab(ax, ay,
                                         random_lab_cov(rng, correlated=correlated, **kw))


def random_block_state(rng, **kw):
    """Mode-separable state with squeezing along each mode's own amplitude."""
    mag = rng.uniform(0.5, 50.0, size=2)
    phi = rng.uniform(-np.pi, np.pi)
    vp = rng.uniform(0.2, 1.0, size=2)
    extra = rng.uniform(1.0, 3.0, size=2)
    cov = np.diag([vp[0], extra[0] / vp[0], vp[1], extra[1] / vp[1]])
    return TwoModeGaussianState(mag[0], mag[1] * np.exp(1j * phi), cov)
