"""
Wave-plates, phase shifters, loss and the balanced Stokes measurement chains.

Conventions: a wave-plate with its fast axis at angle ``theta`` from x acts
on ``(a_x, a_y)`` as ``R(theta) diag(1, e^{i delta}) R(-theta)`` with
``delta = pi`` (half wave) or ``pi/2`` (quarter wave). The polarizing beam
splitter transmits x to detector 1 and reflects y to detector 2; the
difference channel is detector 1 minus detector 2. In a chain the quarter
wave-plate sits before the half wave-plate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .polcore import TwoModeGaussianState, to_db

__all__ = [
    "OpticalElement",
    "half_wave_plate",
    "quarter_wave_plate",
    "phase_shifter",
    "loss",
    "apply_element",
    "apply_chain",
    "MeasurementConfig",
    "ideal_config",
    "MeasurementRecord",
    "measure",
    "detector_forms",
    "BasisCorrelations",
    "rotated_basis_correlations",
]

TARGETS = ("S0", "S1", "S2", "S3")


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _plate(theta, retardance):
    r = _rotation(theta)
    return r @ np.diag([1.0, np.exp(1j * retardance)]) @ r.T


@dataclass(frozen=True)
class OpticalElement:
    """A two-mode transformation.

    ``kind`` is one of ``"hwp"``, ``"qwp"``, ``"phase"`` (unitary, with
    ``angle``) or ``"loss"`` (with transmissivities ``eta``).
    """

    kind: str
    angle: float = 0.0
    eta: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("hwp", "qwp", "phase", "loss"):
            raise ValueError(f"unknown element kind {self.kind!r}")
        if self.kind == "loss":
            eta = tuple(float(e) for e in self.eta)
            if len(eta) != 2 or not all(0.0 <= e <= 1.0 for e in eta):
                raise ValueError(f"transmissivities must lie in [0, 1]: {eta}")
            object.__setattr__(self, "eta", eta)

    @property
    def unitary(self):
        return self.kind != "loss"

    @property
    def matrix(self):
        """2x2 mode transformation; ``None`` for loss."""
        if self.kind == "hwp":
            return _plate(self.angle, np.pi)
        if self.kind == "qwp":
            return _plate(self.angle, np.pi / 2)
        if self.kind == "phase":
            return np.diag([1.0, np.exp(1j * self.angle)])
        return None


def half_wave_plate(theta):
    return OpticalElement("hwp", float(theta))


def quarter_wave_plate(theta):
    return OpticalElement("qwp", float(theta))


def phase_shifter(phi):
    """Adds ``phi`` to the phase of the y mode."""
    return OpticalElement("phase", float(phi))


def loss(eta_x, eta_y=None):
    return OpticalElement("loss", eta=(eta_x, eta_x if eta_y is None else eta_y))


def real_representation(u):
    """4x4 quadrature map induced by a 2x2 mode transformation."""
    m = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            z = u[i, j]
            m[2 * i:2 * i + 2, 2 * j:2 * j + 2] = [[z.real, -z.imag],
                                                   [z.imag, z.real]]
    return m


def apply_element(state, elem):
    """Propagate a state through one element."""
    if elem.kind == "loss":
        h = np.sqrt(np.repeat(elem.eta, 2))
        cov = h[:, None] * state.cov * h[None, :] + np.diag(1.0 - h ** 2)
        return TwoModeGaussianState(state.alpha_x * h[0],
                                    state.alpha_y * h[2], cov)
    u = elem.matrix
    alpha = u @ state.alpha
    m = real_representation(u)
    return TwoModeGaussianState.from_lab(alpha[0], alpha[1],
                                         m @ state.lab_cov() @ m.T)


def apply_chain(state, elements):
    for elem in elements:
        state = apply_element(state, elem)
    return state


@dataclass(frozen=True)
class MeasurementConfig:
    """Which Stokes parameter a balanced detection chain reads out.

    Angles are in radians; ``None`` means the plate is absent. ``detector``
    optionally carries a :class:`polsq.imperfect.DetectorPairModel`.
    """

    target: str
    hwp_angle: float | None = 0.0
    qwp_angle: float | None = None
    channel: str = "difference"
    detector: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown Stokes target {self.target!r}")
        if self.channel not in ("sum", "difference"):
            raise ValueError(f"unknown channel {self.channel!r}")

    def elements(self):
        out = []
        if self.qwp_angle is not None:
            out.append(quarter_wave_plate(self.qwp_angle))
        if self.hwp_angle is not None:
            out.append(half_wave_plate(self.hwp_angle))
        return out

    def with_offsets(self, hwp=0.0, qwp=0.0):
        """Copy with misalignment added to the plates that are present."""
        return replace(
            self,
            hwp_angle=None if self.hwp_angle is None else self.hwp_angle + hwp,
            qwp_angle=None if self.qwp_angle is None else self.qwp_angle + qwp,
        )


def ideal_config(target):
    """The standard chain for a target.

    S0 and S1 use the plain beam splitter (half wave-plate parked at 0,
    which leaves both intensities unchanged); S2 rotates the polarization by
    45 degrees with the half wave-plate at 22.5 degrees; S3 adds a quarter
    wave-plate with axes on the beam splitter axes. The S3 chain's
    difference channel reads out ``-S3``.
    """
    eighth = np.pi / 8
    if target == "S0":
        return MeasurementConfig("S0", 0.0, None, "sum")
    if target == "S1":
        return MeasurementConfig("S1", 0.0, None, "difference")
    if target == "S2":
        return MeasurementConfig("S2", eighth, None, "difference")
    if target == "S3":
        return MeasurementConfig("S3", eighth, 0.0, "difference")
    raise ValueError(f"unknown Stokes target {target!r}")


@dataclass(frozen=True)
class MeasurementRecord:
    target: str
    channel: str
    mean_pair: tuple
    sum_variance: float
    difference_variance: float
    shot_noise: float

    @property
    def variance(self):
        if self.channel == "sum":
            return self.sum_variance
        return self.difference_variance

    @property
    def mean(self):
        n1, n2 = self.mean_pair
        return n1 + n2 if self.channel == "sum" else n1 - n2

    @property
    def normalized(self):
        return self.variance / self.shot_noise

    @property
    def db(self):
        return float(to_db(self.normalized))


def detector_forms(alpha_out):
    """Photon-number fluctuations of both detectors as lab linear forms."""
    b1, b2 = alpha_out
    return (np.array([b1.real, b1.imag, 0.0, 0.0]),
            np.array([0.0, 0.0, b2.real, b2.imag]))


def measure(state, config):
    """Ideal balanced detection of ``state`` through ``config``'s chain."""
    out = apply_chain(state, config.elements())
    cov = out.lab_cov()
    c1, c2 = detector_forms(out.alpha)
    s, d = c1 + c2, c1 - c2
    n1, n2 = abs(out.alpha_x) ** 2, abs(out.alpha_y) ** 2
    shot = n1 + n2
    if shot <= 0:
        raise ValueError("no light reaches the detectors")
    return MeasurementRecord(
        target=config.target,
        channel=config.channel,
        mean_pair=(n1, n2),
        sum_variance=float(s @ cov @ s),
        difference_variance=float(d @ cov @ d),
        shot_noise=shot,
    )


@dataclass(frozen=True)
class BasisCorrelations:
    """Second moments of the two output modes of a rotated beam splitter.

    Quadratures share the phase reference of the input x mode (the y mode if
    x is dark). ``joint`` holds the variances of ``(X1 +- X2)/sqrt(2)`` for
    both quadratures, so that vacuum gives 1.
    """

    angle: float
    mode1: np.ndarray
    mode2: np.ndarray
    cross: np.ndarray
    joint: dict

    @property
    def min_joint(self):
        return min(self.joint.values())


def rotated_basis_correlations(state, angle):
    """Split ``state`` on a beam splitter whose axes sit at ``angle`` to x."""
    c, s = np.cos(angle), np.sin(angle)
    u = np.array([[c, s], [-s, c]], dtype=complex)
    ref = state.alpha_x if abs(state.alpha_x) > 0 else state.alpha_y
    u = u * np.exp(-1j * np.angle(ref)) if abs(ref) > 0 else u
    m = real_representation(u)
    cov = m @ state.lab_cov() @ m.T
    joint = {}
    for name, idx in (("amplitude", 0), ("phase", 1)):
        for sign, label in ((1.0, "sum"), (-1.0, "difference")):
            w = np.zeros(4)
            w[idx], w[2 + idx] = 1.0, sign
            joint[f"{name}_{label}"] = float(w @ cov @ w) / 2.0
    return BasisCorrelations(angle=float(angle), mode1=cov[:2, :2].copy(),
                             mode2=cov[2:, 2:].copy(),
                             cross=cov[:2, 2:].copy(), joint=joint)
