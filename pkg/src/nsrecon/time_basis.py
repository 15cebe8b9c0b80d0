"""Exponentially weighted Legendre basis on (0, T).

The basis functions are ``Psi_n(t) = exp(t) * Q_n(t)`` where ``Q_n`` is the
Legendre polynomial ``P_n`` mapped to (0, T) and normalised in L^2(0, T).
They are orthonormal for the inner product

    <u, v>_w = int_0^T exp(-2t) u(t) v(t) dt.

Everything in this module is tabulated at the nodes of a Gauss-Legendre rule
on (0, T); all integrals are evaluated with that rule.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, DomainError, ShapeError

_MOD = "time_basis"

ORTHO_TOL = 1e-10
SELF_CONVERGENCE_TOL = 1e-10


def legendre_eval(n, x):
    """Legendre polynomial ``P_n`` and its derivative at ``x``.

    Uses the three-term recurrence for the values and
    ``P'_{k+1} = P'_{k-1} + (2k + 1) P_k`` for the derivatives, which stays
    regular at ``x = +-1``.

    Parameters
    ----------
    n : int
        Degree, ``n >= 0``.
    x : float or array_like
        Points in [-1, 1].

    Returns
    -------
    p, dp : float or ndarray
        ``P_n(x)`` and ``P_n'(x)``.
    """
    p, dp = legendre_table(n, x)
    return p[n], dp[n]


def legendre_table(nmax, x):
    """All ``P_0..P_nmax`` and derivatives at ``x``; arrays of shape (nmax+1, *x.shape)."""
    if int(nmax) != nmax or nmax < 0:
        raise DomainError(f"Legendre degree must be a non-negative integer, got {nmax}", _MOD)
    nmax = int(nmax)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-14):
        raise DomainError("Legendre argument outside [-1, 1]", _MOD)
    p = np.empty((nmax + 1,) + x.shape)
    dp = np.empty_like(p)
    p[0] = 1.0
    dp[0] = 0.0
    if nmax >= 1:
        p[1] = x
        dp[1] = 1.0
    for k in range(1, nmax):
        p[k + 1] = ((2 * k + 1) * x * p[k] - k * p[k - 1]) / (k + 1)
        dp[k + 1] = dp[k - 1] + (2 * k + 1) * p[k]
    return p, dp


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on (0, T)."""

    nodes: np.ndarray
    weights: np.ndarray
    T: float

    @classmethod
    def gauss_legendre(cls, n, T):
        x, w = np.polynomial.legendre.leggauss(n)
        nodes = 0.5 * T * (x + 1.0)
        weights = 0.5 * T * w
        nodes.setflags(write=False)
        weights.setflags(write=False)
        return cls(nodes, weights, float(T))

    @property
    def exactness_degree(self):
        return 2 * len(self.nodes) - 1

    def integrate(self, values, axis=-1):
        return np.tensordot(values, self.weights, axes=([axis], [0]))


def _psi_values(N, T, t):
    """Psi_n(t) and Psi_n'(t) for n = 0..N at the points t."""
    t = np.asarray(t, dtype=float)
    p, dp = legendre_table(N, np.clip(2.0 * t / T - 1.0, -1.0, 1.0))
    scale = np.sqrt((2.0 * np.arange(N + 1) + 1.0) / T)
    scale = scale.reshape((N + 1,) + (1,) * t.ndim)
    q = scale * p
    dq = scale * (2.0 / T) * dp
    et = np.exp(t)
    return et * q, et * (q + dq)


@dataclass(frozen=True)
class BasisTable:
    """Basis values ``psi[n, q]`` and derivatives ``dpsi[n, q]`` at quadrature nodes."""

    N: int
    T: float
    psi: np.ndarray
    dpsi: np.ndarray
    quadrature: QuadratureRule

    @property
    def nodes(self):
        return self.quadrature.nodes

    @property
    def weighted(self):
        """Quadrature weights times exp(-2t); the measure of the weighted inner product."""
        q = self.quadrature
        return q.weights * np.exp(-2.0 * q.nodes)

    def gram(self):
        return (self.psi * self.weighted) @ self.psi.T

    def psi_at(self, t):
        """Basis values at arbitrary times in [0, T]; shape (N+1, *t.shape)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-14 * self.T) or np.any(t > self.T * (1 + 1e-14)):
            raise DomainError(f"time outside [0, {self.T}]", _MOD)
        return _psi_values(self.N, self.T, t)[0]

    def dpsi_at(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-14 * self.T) or np.any(t > self.T * (1 + 1e-14)):
            raise DomainError(f"time outside [0, {self.T}]", _MOD)
        return _psi_values(self.N, self.T, t)[1]

    def psi_at_zero(self):
        """``Psi_n(0) = (-1)^n sqrt((2n+1)/T)``, used to recover the initial field."""
        n = np.arange(self.N + 1)
        return (-1.0) ** n * np.sqrt((2.0 * n + 1.0) / self.T)


def default_n_quad(N):
    return max(200, 4 * (N + 1))


def build_basis_table(N, T, n_quad=None):
    """Tabulate the basis on a Gauss-Legendre rule and certify it.

    Raises `ConfigurationError` if the rule cannot reproduce orthonormality
    to 1e-10, or if the triple-product integrals are not self-converged
    against a rule with twice as many nodes.
    """
    if int(N) != N or N < 0:
        raise ConfigurationError(f"mode cutoff N must be a non-negative integer, got {N}", _MOD)
    if not T > 0:
        raise ConfigurationError(f"final time T must be positive, got {T}", _MOD)
    N = int(N)
    T = float(T)
    if n_quad is None:
        n_quad = default_n_quad(N)
    if n_quad < N + 1:
        raise ConfigurationError(
            f"n_quad={n_quad} cannot integrate degree-{2 * N} products exactly", _MOD)

    rule = QuadratureRule.gauss_legendre(n_quad, T)
    psi, dpsi = _psi_values(N, T, rule.nodes)
    psi.setflags(write=False)
    dpsi.setflags(write=False)
    table = BasisTable(N, T, psi, dpsi, rule)

    defect = np.max(np.abs(table.gram() - np.eye(N + 1)))
    if defect > ORTHO_TOL:
        raise ConfigurationError(
            f"orthonormality defect {defect:.3e} exceeds {ORTHO_TOL:g} with n_quad={n_quad}", _MOD)

    # the exp(t) factor makes the triple products non-polynomial
    fine = QuadratureRule.gauss_legendre(2 * n_quad, T)
    fine_psi, _ = _psi_values(N, T, fine.nodes)
    a_coarse = _triple(psi, table.weighted)
    a_fine = _triple(fine_psi, fine.weights * np.exp(-2.0 * fine.nodes))
    drift = np.max(np.abs(a_coarse - a_fine)) / max(1.0, np.max(np.abs(a_fine)))
    if drift > SELF_CONVERGENCE_TOL:
        raise ConfigurationError(
            f"n_quad={n_quad} not self-converged (relative drift {drift:.3e})", _MOD)
    return table


def _triple(psi, w):
    return np.einsum("mq,nq,lq,q->mnl", psi, psi, psi, w, optimize=True)


def _as_node_samples(samples, basis, times):
    samples = np.asarray(samples, dtype=float)
    if times is None:
        if samples.shape[0] != len(basis.nodes):
            raise ShapeError(
                f"{samples.shape[0]} samples for {len(basis.nodes)} quadrature nodes; "
                "pass `times` to enable interpolation", _MOD)
        return samples
    times = np.asarray(times, dtype=float)
    if times.shape[0] != samples.shape[0]:
        raise ShapeError("times and samples disagree in length", _MOD)
    return CubicSpline(times, samples, axis=0)(basis.nodes)


def fourier_coefficients(samples, basis, times=None):
    """Weighted Fourier coefficients ``u_n = int exp(-2t) u(t) Psi_n(t) dt``, n = 0..N.

    ``samples`` has time along axis 0, either at the quadrature nodes or at
    ``times`` (then cubic-spline interpolated onto the nodes). Trailing axes
    are carried through, so a whole space-time field can be projected at once.
    """
    u = _as_node_samples(samples, basis, times)
    return np.tensordot(basis.psi * basis.weighted, u, axes=([1], [0]))


def expand(modes, basis, t):
    """``sum_n modes[n] * Psi_n(t)``. ``t`` may be a scalar or an array."""
    modes = np.asarray(modes, dtype=float)
    if modes.shape[0] != basis.N + 1:
        raise ShapeError(f"expected {basis.N + 1} modes, got {modes.shape[0]}", _MOD)
    return np.tensordot(basis.psi_at(t), modes, axes=([0], [0]))


def project(samples, basis, times=None):
    """Projection onto span{Psi_0..Psi_N}, returned at the quadrature nodes."""
    coeffs = fourier_coefficients(samples, basis, times)
    return np.tensordot(basis.psi.T, coeffs, axes=([1], [0]))


def weighted_norm(samples, basis):
    """``||u||_w`` for samples at the quadrature nodes (time on axis 0)."""
    u = np.asarray(samples, dtype=float)
    sq = np.tensordot(basis.weighted, u * u, axes=([0], [0]))
    return float(np.sqrt(np.sum(sq)))


def coupling_s(basis):
    """``s_mn = int exp(-2t) Psi_n'(t) Psi_m(t) dt``; row index m, column n."""
    return (basis.psi * basis.weighted) @ basis.dpsi.T


def coupling_a(basis):
    """``a_mnl = int exp(-2t) Psi_l Psi_n Psi_m dt`` as an (N+1)^3 array."""
    return _triple(basis.psi, basis.weighted)


@dataclass(frozen=True)
class CouplingCoefficients:
    S: np.ndarray
    A: np.ndarray

    @classmethod
    def from_basis(cls, basis):
        S = coupling_s(basis)
        A = coupling_a(basis)
        S.setflags(write=False)
        A.setflags(write=False)
        return cls(S, A)


def s_symmetric_part_reference(N, T):
    """Closed form of ``s_mn + s_nm`` from integrating d/dt(exp(-2t) Psi_n Psi_m) by parts."""
    n = np.arange(N + 1)
    qT = np.sqrt((2.0 * n + 1.0) / T)
    q0 = (-1.0) ** n * qT
    return 2.0 * np.eye(N + 1) + np.outer(qT, qT) - np.outer(q0, q0)
