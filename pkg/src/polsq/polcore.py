"""
Two-mode Gaussian polarization states and their linearized Stokes statistics.

Quadrature convention
---------------------
Each mode operator is split as ``a = alpha + da`` with amplitude and phase
noise quadratures ``dX+ = da^dag + da`` and ``dX- = i(da^dag - da)``, so that
vacuum has unit variance in both. The covariance matrix of a
:class:`TwoModeGaussianState` is ordered ``(dX+_x, dX-_x, dX+_y, dX-_y)`` and
each mode's pair is referenced to the phase of that mode's own mean amplitude
(amplitude/phase quadratures). A mode with zero mean amplitude uses the lab
phase reference. ``lab_cov`` converts to a common (lab) phase reference.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GUARD",
    "Squeezing",
    "TwoModeGaussianState",
    "StokesEstimate",
    "UncertaintyReport",
    "to_db",
    "from_db",
    "frame_rotation",
    "stokes_coefficients",
    "stokes_linearized",
    "stokes_means",
    "stokes_means_vs_phase",
    "uncertainty_report",
    "build_example",
    "coherent_state",
]

#: relative guard band applied to the strict inequalities of the classifier
GUARD = 1e-9

# symplectic form for (X+, X-) pairs with [X+, X-] = 2i
_J = np.array([[0.0, 1.0], [-1.0, 0.0]])
OMEGA = np.kron(np.eye(2), _J)

_ZERO_AMPLITUDE = 1e-12


def to_db(v):
    """Normalized variance to decibels, ``10 log10 v``."""
    return 10.0 * np.log10(v)


def from_db(db):
    """Decibels to a linear normalized variance."""
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def frame_rotation(theta_x, theta_y):
    """4x4 map from mean-referenced quadratures to lab-referenced ones."""
    out = np.zeros((4, 4))
    out[:2, :2] = _rot(theta_x)
    out[2:, 2:] = _rot(theta_y)
    return out


def _frame_phase(alpha, scale):
    if abs(alpha) <= _ZERO_AMPLITUDE * max(1.0, scale):
        return 0.0
    return float(np.angle(alpha))


def check_covariance(cov, atol=1e-9):
    """Validate a 4x4 quadrature covariance; returns it as a float array.

    Raises ``ValueError`` if the matrix is not symmetric, not positive
    semidefinite, or violates the uncertainty principle
    ``cov + i*Omega >= 0``.
    """
    cov = np.array(cov, dtype=float)
    if cov.shape != (4, 4):
        raise ValueError(f"covariance must be 4x4, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(cov))))
    if not np.allclose(cov, cov.T, rtol=0, atol=atol * scale):
        raise ValueError("covariance is not symmetric")
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() < -atol * scale:
        raise ValueError("covariance is not positive semidefinite")
    if np.linalg.eigvalsh(cov + 1j * OMEGA).min() < -atol * scale:
        raise ValueError(
            "covariance violates the quadrature uncertainty principle"
        )
    return cov


@dataclass(frozen=True)
class TwoModeGaussianState:
    """Mean amplitudes of the x/y polarization modes and their noise.

    Parameters
    ----------
    alpha_x, alpha_y : complex
        Mean field amplitudes; ``|alpha|**2`` is the mean photon number.
    cov : array_like, shape (4, 4)
        Covariance of ``(dX+_x, dX-_x, dX+_y, dX-_y)`` in mean-referenced
        quadratures, vacuum normalized (identity = coherent state).
    """

    alpha_x: complex
    alpha_y: complex
    cov: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        cov = check_covariance(self.cov)
        cov.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "alpha_x", complex(self.alpha_x))
        object.__setattr__(self, "alpha_y", complex(self.alpha_y))

    @property
    def alpha(self):
        return np.array([self.alpha_x, self.alpha_y])

    @property
    def mean_photon_number(self):
        return abs(self.alpha_x) ** 2 + abs(self.alpha_y) ** 2

    @property
    def relative_phase(self):
        """``arg(alpha_y) - arg(alpha_x)``."""
        return float(np.angle(self.alpha_y) - np.angle(self.alpha_x))

    def frame_phases(self):
        scale = float(np.sqrt(self.mean_photon_number))
        return (_frame_phase(self.alpha_x, scale),
                _frame_phase(self.alpha_y, scale))

    def lab_cov(self):
        """Covariance with both modes referenced to the common lab phase."""
        r = frame_rotation(*self.frame_phases())
        return r @ self.cov @ r.T

    @classmethod
    def from_lab(cls, alpha_x, alpha_y, lab_cov):
        """Build a state from a lab-referenced covariance."""
        alpha_x, alpha_y = complex(alpha_x), complex(alpha_y)
        scale = float(np.sqrt(abs(alpha_x) ** 2 + abs(alpha_y) ** 2))
        r = frame_rotation(_frame_phase(alpha_x, scale),
                           _frame_phase(alpha_y, scale))
        if abs(alpha_x) <= _ZERO_AMPLITUDE * max(1.0, scale):
            alpha_x = 0j
        if abs(alpha_y) <= _ZERO_AMPLITUDE * max(1.0, scale):
            alpha_y = 0j
        cov = r.T @ np.asarray(lab_cov, dtype=float) @ r
        return cls(alpha_x, alpha_y, 0.5 * (cov + cov.T))

    def is_block_diagonal(self, atol=1e-12):
        return bool(np.all(np.abs(self.cov[:2, 2:]) <= atol))


def coherent_state(alpha_x, alpha_y=0.0):
    return TwoModeGaussianState(alpha_x, alpha_y, np.eye(4))


@dataclass(frozen=True)
class StokesEstimate:
    """Means and variances of S0..S3.

    ``variance`` is in photon-number units; ``normalized`` divides it by the
    shot-noise level ``<n>`` and is ``None`` when there are no photons.
    """

    mean: np.ndarray
    variance: np.ndarray
    shot_noise: float

    def __post_init__(self):
        for name in ("mean", "variance"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (4,):
                raise ValueError(f"{name} must have 4 entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.shot_noise < 0:
            raise ValueError("shot noise must be nonnegative")
        object.__setattr__(self, "shot_noise", float(self.shot_noise))

    @property
    def normalized(self):
        if self.shot_noise <= 0:
            return None
        return self.variance / self.shot_noise

    @property
    def normalized_db(self):
        norm = self.normalized
        return None if norm is None else to_db(norm)


def stokes_means(alpha_x, alpha_y):
    """Classical Stokes vector of a pair of complex amplitudes."""
    cross = np.conj(alpha_x) * alpha_y
    nx, ny = abs(alpha_x) ** 2, abs(alpha_y) ** 2
    return np.array([nx + ny, nx - ny, 2.0 * cross.real, 2.0 * cross.imag])


def stokes_means_vs_phase(alpha_x, alpha_y, phi):
    """Stokes means for real amplitudes with relative phase ``phi``."""
    return np.array([
        alpha_x ** 2 + alpha_y ** 2,
        alpha_x ** 2 - alpha_y ** 2,
        2.0 * alpha_x * alpha_y * np.cos(phi),
        2.0 * alpha_x * alpha_y * np.sin(phi),
    ])


def stokes_coefficients(alpha_x, alpha_y):
    """First-order Stokes fluctuations as linear forms in lab quadratures.

    Row ``j`` holds ``c_j`` with ``dS_j = c_j . (dX+_x, dX-_x, dX+_y, dX-_y)``
    where the quadratures share the lab phase reference.
    """
    xr, xi = alpha_x.real, alpha_x.imag
    yr, yi = alpha_y.real, alpha_y.imag
    return np.array([
        [xr, xi, yr, yi],
        [xr, xi, -yr, -yi],
        [yr, yi, xr, xi],
        [yi, -yr, -xi, xr],
    ])


def local_stokes_coefficients(state):
    """Same as :func:`stokes_coefficients` but for ``state.cov``'s frame."""
    r = frame_rotation(*state.frame_phases())
    return stokes_coefficients(state.alpha_x, state.alpha_y) @ r


def stokes_linearized(state):
    """Stokes means and first-order noise propagated from the covariance."""
    if not isinstance(state, TwoModeGaussianState):
        raise TypeError("expected a TwoModeGaussianState")
    c = local_stokes_coefficients(state)
    variance = np.einsum("ji,ik,jk->j", c, state.cov, c)
    return StokesEstimate(
        mean=stokes_means(state.alpha_x, state.alpha_y),
        variance=variance,
        shot_noise=state.mean_photon_number,
    )


class Squeezing(str, enum.Enum):
    NOT_SQUEEZED = "NotSqueezed"
    COHERENT_RELATIVE = "CoherentRelative"
    POLARIZATION_SQUEEZED = "PolarizationSqueezed"

    def __str__(self):
        return self.value


def _less(a, b):
    return a < b - GUARD * max(abs(a), abs(b))


# (pair of variances, index of the Stokes mean bounding their product)
_PAIRS = ((1, 2, 3), (2, 3, 1), (3, 1, 2))


@dataclass(frozen=True)
class UncertaintyReport:
    """Normalized uncertainty products, their bounds, and classification.

    ``products[i]`` is ``V1V2``, ``V2V3``, ``V3V1`` for ``i = 0, 1, 2`` and
    ``bounds[i]`` is the matching ``|<S_l>|**2 / <n>**2`` with ``l = 3, 1, 2``.
    ``variance_bounds[j]`` maps each ``l`` to ``|<S_l>| / <n>``, the
    single-variance bound used by the classifier.
    """

    normalized: np.ndarray
    products: np.ndarray
    bounds: np.ndarray
    mus_deficits: np.ndarray
    classification: dict
    conjugate_partner: dict
    variance_bounds: dict
    degenerate: bool

    def squeezed(self, kind=Squeezing.POLARIZATION_SQUEEZED):
        return [j for j, c in self.classification.items() if c == kind]


def uncertainty_report(est):
    """Classify each Stokes parameter of an estimate.

    A parameter is coherent-relative squeezed when its normalized variance is
    below 1, and polarization squeezed when additionally some assignment of
    the remaining two indices ``k, l`` gives
    ``V_j < |<S_l>|/<n> < V_k``. ``S0`` commutes with everything and can at
    most be coherent-relative squeezed.

    When every ``<S_l>`` vanishes the report is flagged ``degenerate`` and no
    parameter can be polarization squeezed.
    """
    if est.shot_noise <= 0:
        raise ValueError("uncertainty report needs a nonzero shot-noise level")
    v = est.normalized
    m = np.abs(est.mean) / est.shot_noise

    products = np.array([v[a] * v[b] for a, b, _ in _PAIRS])
    bounds = np.array([m[l] ** 2 for _, _, l in _PAIRS])

    classification = {}
    partner = {}
    variance_bounds = {}
    for j in range(4):
        kind = Squeezing.NOT_SQUEEZED
        if _less(v[j], 1.0):
            kind = Squeezing.COHERENT_RELATIVE
        if j > 0:
            others = [i for i in (1, 2, 3) if i != j]
            variance_bounds[j] = {l: float(m[l]) for l in others}
            if kind is Squeezing.COHERENT_RELATIVE:
                for l in others:
                    k = others[0] if l == others[1] else others[1]
                    if _less(v[j], m[l]) and _less(m[l], v[k]):
                        kind = Squeezing.POLARIZATION_SQUEEZED
                        partner[j] = k
                        break
        classification[j] = kind

    return UncertaintyReport(
        normalized=v,
        products=products,
        bounds=bounds,
        mus_deficits=products - bounds,
        classification=classification,
        conjugate_partner=partner,
        variance_bounds=variance_bounds,
        degenerate=bool(np.all(m[1:] == 0.0)),
    )


def _check_pair(v_plus, v_minus):
    if v_plus <= 0 or v_minus <= 0:
        raise ValueError("quadrature variances must be positive")
    if v_plus * v_minus < 1.0 - 1e-12:
        raise ValueError(
            f"unphysical variance pair: {v_plus} * {v_minus} < 1"
        )
    if v_plus > 1.0 + 1e-12 or v_minus < 1.0 - 1e-12:
        raise ValueError("expected an amplitude squeezed pair v+ <= 1 <= v-")


def build_example(example_id, v_plus, v_minus, alpha, phi=0.0):
    """Construct one of the three amplitude-squeezed combinations.

    1. x amplitude squeezed with amplitude ``alpha``, y vacuum.
    2. x amplitude squeezed, y coherent, both with amplitude ``alpha``.
    3. x and y both amplitude squeezed with equal ``alpha``.

    ``phi`` is the relative phase of the y mode (ignored for example 1).
    """
    _check_pair(v_plus, v_minus)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    squeezed = [v_plus, v_minus]
    if example_id == 1:
        return TwoModeGaussianState(alpha, 0.0, np.diag(squeezed + [1, 1]))
    alpha_y = alpha * np.exp(1j * phi)
    if example_id == 2:
        return TwoModeGaussianState(alpha, alpha_y,
                                    np.diag(squeezed + [1, 1]))
    if example_id == 3:
        return TwoModeGaussianState(alpha, alpha_y, np.diag(squeezed * 2))
    raise ValueError(f"unknown example id {example_id!r}")
