"""
Exact Stokes statistics in a truncated two-mode Fock space.

Two-mode basis vectors ``|n_x, n_y>`` are indexed ``n_x * (N + 1) + n_y``
where ``N`` is the per-mode cutoff. Operators are stored as sparse matrices;
``FockOperator.dense`` materializes them for small cutoffs.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .polcore import (
    StokesEstimate,
    TwoModeGaussianState,
    build_example,
    stokes_linearized,
)

__all__ = [
    "TruncationError",
    "FockOperator",
    "FockState",
    "auto_cutoff",
    "annihilation",
    "mode_operators",
    "stokes_operators",
    "coherent_squeezed_state",
    "quadrature_variances",
    "product_state",
    "fock_state",
    "stokes_exact",
    "IdentityReport",
    "verify_operator_identities",
    "ConvergenceRow",
    "convergence_study",
]

LEAKAGE_THRESHOLD = 1e-8


class TruncationError(ValueError):
    """The state has too much weight at or beyond the Fock cutoff."""


def auto_cutoff(alpha):
    a = abs(alpha)
    return int(math.ceil(a * a + 8 * a + 20))


@dataclass(frozen=True)
class FockOperator:
    cutoff: int
    matrix: sp.csr_matrix

    @property
    def dense(self):
        return self.matrix.toarray()

    @property
    def H(self):
        return FockOperator(self.cutoff, self.matrix.conj().T.tocsr())

    def __matmul__(self, other):
        if isinstance(other, FockOperator):
            return FockOperator(self.cutoff, (self.matrix @ other.matrix).tocsr())
        return self.matrix @ other

    def __add__(self, other):
        return FockOperator(self.cutoff, (self.matrix + other.matrix).tocsr())

    def __sub__(self, other):
        return FockOperator(self.cutoff, (self.matrix - other.matrix).tocsr())

    def __mul__(self, scalar):
        return FockOperator(self.cutoff, (scalar * self.matrix).tocsr())

    __rmul__ = __mul__


def annihilation(cutoff):
    """Single-mode annihilation operator on ``|0>..|cutoff>``."""
    return sp.diags(np.sqrt(np.arange(1, cutoff + 1)), 1,
                    shape=(cutoff + 1, cutoff + 1), format="csr",
                    dtype=complex)


@functools.lru_cache(maxsize=8)
def mode_operators(cutoff):
    a = annihilation(cutoff)
    eye = sp.identity(cutoff + 1, format="csr", dtype=complex)
    return (FockOperator(cutoff, sp.kron(a, eye, format="csr")),
            FockOperator(cutoff, sp.kron(eye, a, format="csr")))


@functools.lru_cache(maxsize=8)
def stokes_operators(cutoff):
    """``(S0, S1, S2, S3)`` built from the mode operators."""
    ax, ay = mode_operators(cutoff)
    nx = ax.H @ ax
    ny = ay.H @ ay
    xy = ax.H @ ay
    yx = ay.H @ ax
    return (nx + ny, nx - ny, xy + yx, (yx - xy) * 1j)


def _squeezed_vacuum(r, theta, dim):
    m = np.arange((dim + 1) // 2)
    t = math.tanh(r)
    out = np.zeros(dim, dtype=complex)
    if t == 0.0:
        out[0] = 1.0
        return out
    logmag = (0.5 * np.array([math.lgamma(2 * k + 1) for k in m])
              - m * math.log(2.0)
              - np.array([math.lgamma(k + 1) for k in m])
              + m * math.log(t) - 0.5 * math.log(math.cosh(r)))
    out[0::2] = np.exp(logmag) * (-np.exp(1j * theta)) ** m
    return out


def coherent_squeezed_state(alpha, r=0.0, theta=0.0, cutoff=None,
                            threshold=LEAKAGE_THRESHOLD):
    """Single-mode amplitudes of ``D(alpha) S(r e^{i theta}) |0>``.

    With ``theta = 0`` the ``X+`` quadrature variance is ``exp(-2 r)``.
    The vector is computed in a padded space, truncated to ``cutoff`` and
    renormalized. Raises :class:`TruncationError` if the discarded weight plus
    the occupancy of ``|cutoff>`` exceeds ``threshold``.
    """
    if cutoff is None:
        cutoff = auto_cutoff(alpha)
    pad = cutoff + int(10 * math.sqrt(cutoff + 1)) + 40
    vec = _squeezed_vacuum(r, theta, pad + 1)
    if alpha != 0:
        a = annihilation(pad)
        gen = alpha * a.conj().T - np.conj(alpha) * a
        vec = expm_multiply(gen.tocsc(), vec)
    kept = vec[: cutoff + 1]
    lost = float(np.sum(np.abs(vec[cutoff + 1:]) ** 2))
    leakage = lost + abs(kept[-1]) ** 2
    if leakage > threshold:
        raise TruncationError(
            f"cutoff {cutoff} leaks {leakage:.2e} > {threshold:.0e} "
            f"for alpha={alpha}, r={r}"
        )
    return kept / np.linalg.norm(kept)


def quadrature_variances(vec):
    """Lab-frame ``(V(X+), V(X-), cov(X+, X-))`` of a single-mode vector."""
    cutoff = len(vec) - 1
    a = annihilation(cutoff)
    xp = a + a.conj().T
    xm = 1j * (a.conj().T - a)

    def expect(op):
        return np.vdot(vec, op @ vec).real

    mp, mm = expect(xp), expect(xm)
    vp = expect(xp @ xp) - mp ** 2
    vm = expect(xm @ xm) - mm ** 2
    sym = 0.5 * (xp @ xm + xm @ xp)
    return vp, vm, expect(sym) - mp * mm


@dataclass(frozen=True)
class FockState:
    """Normalized two-mode state vector over ``|n_x, n_y>``."""

    cutoff: int
    amplitudes: np.ndarray
    threshold: float = LEAKAGE_THRESHOLD

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != ((self.cutoff + 1) ** 2,):
            raise ValueError("amplitude vector does not match the cutoff")
        if abs(np.linalg.norm(amps) - 1.0) > 1e-12:
            raise ValueError("state vector is not normalized")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def probabilities(self):
        n = self.cutoff + 1
        return (np.abs(self.amplitudes) ** 2).reshape(n, n)

    @property
    def leakage(self):
        """Probability of finding either mode at the cutoff."""
        p = self.probabilities
        return float(p[-1, :].sum() + p[:, -1].sum() - p[-1, -1])

    @property
    def truncation_safe(self):
        return self.leakage < self.threshold


def product_state(vx, vy, threshold=LEAKAGE_THRESHOLD):
    vx, vy = np.asarray(vx), np.asarray(vy)
    if len(vx) != len(vy):
        raise ValueError("both modes must share one cutoff")
    return FockState(len(vx) - 1, np.kron(vx, vy), threshold)


def _mode_parameters(block, tol=1e-9):
    """Squeezing ``(r, theta)`` of a pure single-mode lab covariance block."""
    det = np.linalg.det(block)
    if abs(det - 1.0) > tol * max(1.0, det):
        raise ValueError(
            "only pure (minimum uncertainty) mode blocks have a state vector"
        )
    w, v = np.linalg.eigh(block)
    r = -0.5 * math.log(w[0])
    psi = math.atan2(v[1, 0], v[0, 0])
    return r, 2.0 * psi


def fock_state(state, cutoff=None, threshold=LEAKAGE_THRESHOLD):
    """Exact Fock vector of a pure, mode-separable Gaussian state."""
    if not isinstance(state, TwoModeGaussianState):
        raise TypeError("expected a TwoModeGaussianState")
    if not state.is_block_diagonal():
        raise ValueError("inter-mode correlations are not supported")
    lab = state.lab_cov()
    params = [_mode_parameters(lab[:2, :2]), _mode_parameters(lab[2:, 2:])]
    if cutoff is None:
        cutoff = max(auto_cutoff(state.alpha_x), auto_cutoff(state.alpha_y))
    vx = coherent_squeezed_state(state.alpha_x, *params[0], cutoff, threshold)
    vy = coherent_squeezed_state(state.alpha_y, *params[1], cutoff, threshold)
    return product_state(vx, vy, threshold)


def stokes_exact(fstate):
    """Means and variances of S0..S3 from explicit matrix elements."""
    if not fstate.truncation_safe:
        raise TruncationError(
            f"boundary occupancy {fstate.leakage:.2e} exceeds "
            f"{fstate.threshold:.0e}"
        )
    psi = fstate.amplitudes
    mean = np.empty(4)
    var = np.empty(4)
    for j, op in enumerate(stokes_operators(fstate.cutoff)):
        s_psi = op @ psi
        mean[j] = np.vdot(psi, s_psi).real
        var[j] = np.vdot(s_psi, s_psi).real - mean[j] ** 2
    return StokesEstimate(mean=mean, variance=np.maximum(var, 0.0),
                          shot_noise=max(mean[0], 0.0))


@dataclass(frozen=True)
class IdentityReport:
    cutoff: int
    interior_dim: int
    residuals: dict

    @property
    def max_residual(self):
        return max(self.residuals.values())


def verify_operator_identities(cutoff):
    """Residuals of the Stokes commutators and the quantum Poincare sphere.

    Every residual is the max-norm over the interior subspace
    ``n_x + n_y <= cutoff - 2``, which the truncation cannot reach because
    the Stokes operators conserve the total photon number.
    """
    if cutoff < 2:
        raise ValueError("cutoff must be at least 2")
    s0, s1, s2, s3 = (op.dense for op in stokes_operators(cutoff))
    n = np.arange(cutoff + 1)
    total = (n[:, None] + n[None, :]).ravel()
    inner = np.flatnonzero(total <= cutoff - 2)

    def res(m):
        return float(np.max(np.abs(m[np.ix_(inner, inner)]))) if len(inner) else 0.0

    def comm(a, b):
        return a @ b - b @ a

    residuals = {
        "[S0,S1]": res(comm(s0, s1)),
        "[S0,S2]": res(comm(s0, s2)),
        "[S0,S3]": res(comm(s0, s3)),
        "[S1,S2]-2iS3": res(comm(s1, s2) - 2j * s3),
        "[S2,S3]-2iS1": res(comm(s2, s3) - 2j * s1),
        "[S3,S1]-2iS2": res(comm(s3, s1) - 2j * s2),
        "poincare": res(s1 @ s1 + s2 @ s2 + s3 @ s3 - s0 @ s0 - 2 * s0),
    }
    hermitian = max(float(np.max(np.abs(s - s.conj().T)))
                    for s in (s0, s1, s2, s3))
    residuals["hermiticity"] = hermitian
    return IdentityReport(cutoff, len(inner), residuals)


@dataclass(frozen=True)
class ConvergenceRow:
    alpha: float
    linearized: np.ndarray
    exact: np.ndarray

    @property
    def difference(self):
        return np.abs(self.exact - self.linearized)


def convergence_study(example_id, alpha_list, r, cutoff=None):
    """Compare linearized and exact normalized variances over amplitudes.

    The input state is :func:`polsq.polcore.build_example` with
    ``V+ = exp(-2 r)`` and ``V- = exp(2 r)``; ``r = 0`` gives coherent
    inputs.
    """
    rows = []
    for alpha in alpha_list:
        state = build_example(example_id, math.exp(-2 * r), math.exp(2 * r),
                              alpha)
        lin = stokes_linearized(state).normalized
        exact = stokes_exact(fock_state(state, cutoff)).normalized
        rows.append(ConvergenceRow(float(alpha), lin, exact))
    return rows


def linear_state_from_fock(fstate):
    """Gaussian moments (means, lab covariance) of a product Fock state.

    Used to cross-check constructed vectors against their intended
    covariance; only valid for product states.
    """
    n = fstate.cutoff + 1
    mat = fstate.amplitudes.reshape(n, n)
    # product state: rank-one matrix
    u, s, vh = np.linalg.svd(mat)
    vx, vy = u[:, 0] * math.sqrt(s[0]), vh[0] * math.sqrt(s[0])
    a = annihilation(fstate.cutoff)
    alphas = [np.vdot(v, a @ v) / np.vdot(v, v) for v in (vx, vy)]
    blocks = []
    for v in (vx, vy):
        vp, vm, c = quadrature_variances(v / np.linalg.norm(v))
        blocks.append(np.array([[vp, c], [c, vm]]))
    lab = np.zeros((4, 4))
    lab[:2, :2], lab[2:, 2:] = blocks
    return TwoModeGaussianState.from_lab(alphas[0], alphas[1], lab)

