"""Solvers for the regularised least-squares problems of the reduced model.

The design matrix has the block form

    A = [ w_i (I (x) L - S (x) I) ]
        [ I (x) B_w               ]
        [ I (x) H_w               ]

(time modes (x) space). With a symmetric spatial operator ``L`` its normal
matrix is

    A^T A = I (x) P + w_i^2 (S^T S) (x) I - w_i^2 R (x) L,
    P = w_i^2 (L^2 - 2L) + B_w^T B_w + H_w^T H_w,

where ``R = S + S^T - 2I = q_T q_T^T - q_0 q_0^T`` has rank two. Diagonalising
``S^T S`` in time and ``P`` in space leaves a diagonal matrix minus a rank-2n
correction, which a Woodbury capacitance matrix of size 2n absorbs. The
factorisation is computed once and reused for every right-hand side; it also
preconditions conjugate gradients on the exact normal equations, so small
inconsistencies (quadrature round-off in R, a non-symmetric L) only cost a
few extra iterations.
"""

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

_MOD = "inverse_solver"

log = logging.getLogger(__name__)


class KroneckerNormalSolver:
    """Direct solver for the normal equations of a `reduced.SystemAssembler` design matrix.

    Parameters
    ----------
    L : sparse matrix (n, n)
        Spatial diffusion operator on interior unknowns.
    S : ndarray (M, M)
        Time coupling matrix.
    q_end, q_start : ndarray (M,)
        Vectors with ``S + S^T = 2I + q_end q_end^T - q_start q_start^T``.
    G : sparse matrix (n, n)
        Mode-independent Gram matrix of the boundary and regulariser rows.
    w : float
        Interior row weight.
    """

    def __init__(self, L, S, q_end, q_start, G, w):
        Ls = 0.5 * (L + L.T)
        Ld = Ls.toarray()
        n = Ld.shape[0]
        M = S.shape[0]
        w2 = w * w
        self.n, self.n_modes = n, M

        lam, V = np.linalg.eigh(S.T @ S)
        P = w2 * (Ld @ Ld - 2.0 * Ld) + G.toarray()
        theta, Phi = np.linalg.eigh(0.5 * (P + P.T))
        del P
        self.V, self.Phi = V, Phi
        # D[m, j] = theta_j + w^2 lambda_m
        self.D = theta[None, :] + w2 * lam[:, None]
        if np.min(self.D) <= 0:
            raise SolverError("normal matrix block is not positive definite", _MOD)
        self.a = V.T @ q_end
        self.b = V.T @ q_start

        Lt = Phi.T @ (Ls @ Phi)
        del Ld
        self.FL = w2 * Lt
        inv_d = 1.0 / self.D
        alpha = (self.a ** 2) @ inv_d
        beta = (self.b ** 2) @ inv_d
        gamma = (self.a * self.b) @ inv_d
        Z = np.empty((2 * n, 2 * n))
        Z[:n, :n] = -self.FL * alpha[None, :]
        Z[:n, n:] = -self.FL * gamma[None, :]
        Z[n:, :n] = self.FL * gamma[None, :]
        Z[n:, n:] = self.FL * beta[None, :]
        Z[np.diag_indices(2 * n)] += 1.0
        self.lu = sla.lu_factor(Z, overwrite_a=True, check_finite=False)

    def solve(self, rhs):
        """Apply the inverse of the (structured) normal matrix to a flat vector."""
        R = np.asarray(rhs, dtype=float).reshape(self.n_modes, self.n)
        Rt = self.V.T @ R @ self.Phi
        z = Rt / self.D
        u1 = self.a @ z
        u2 = self.b @ z
        v = np.concatenate([self.FL @ u1, -(self.FL @ u2)])
        c = sla.lu_solve(self.lu, v, check_finite=False)
        Y = z + (np.outer(self.a, c[:self.n]) + np.outer(self.b, c[self.n:])) / self.D
        return (self.V @ Y @ self.Phi.T).ravel()


def normal_cg(A, rhs, precond=None, x0=None, rtol=1e-8, maxiter=200):
    """Conjugate gradients on ``A^T A x = A^T rhs`` without forming ``A^T A``.

    Returns ``(x, rel_res, iterations)`` where ``rel_res`` is
    ``||A^T (rhs - A x)|| / ||A^T rhs||``.
    """
    g = A.T @ rhs
    gnorm = np.linalg.norm(g)
    n = A.shape[1]
    if gnorm == 0.0:
        return np.zeros(n), 0.0, 0
    apply_precond = precond if precond is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = g - A.T @ (A @ x)
    z = apply_precond(r)
    p = z.copy()
    rz = r @ z
    rel = np.linalg.norm(r) / gnorm
    it = 0
    while rel > rtol and it < maxiter:
        Ap = A.T @ (A @ p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        # recompute the true residual now and then; the recursion drifts
        if it % 10 == 0:
            r = g - A.T @ (A @ x)
        rel = np.linalg.norm(r) / gnorm
        if rel <= rtol:
            break
        z = apply_precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    rel = np.linalg.norm(g - A.T @ (A @ x)) / gnorm
    return x, rel, it


def sparse_normal_solve(A, rhs):
    """Normal equations by sparse LU; only sensible for small systems."""
    M = (A.T @ A).tocsc()
    return spla.splu(M).solve(A.T @ rhs)


def lsqr_solve(A, rhs, rtol=1e-8, maxiter=None):
    """scipy LSQR; returns ``(x, rel_normal_res, iterations)``."""
    maxiter = maxiter or 20 * A.shape[1]
    out = spla.lsqr(A, rhs, atol=rtol * 1e-2, btol=rtol * 1e-2, iter_lim=maxiter)
    x, itn = out[0], out[2]
    g = A.T @ rhs
    gn = np.linalg.norm(g)
    rel = 0.0 if gn == 0 else np.linalg.norm(g - A.T @ (A @ x)) / gn
    return x, rel, itn


def dense_lstsq(A, rhs):
    """Reference solution by dense SVD-based least squares."""
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    return np.linalg.lstsq(Ad, rhs, rcond=None)[0]
