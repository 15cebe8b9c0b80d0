"""Time-reduced elliptic system for the Fourier modes and its least-squares form.

A mode stack is an array of shape ``(N+1, 2, ny, nx)`` holding ``u_0..u_N``;
boundary rows are zero. The unknown vector of the least-squares problem is the
interior part of the stack, flattened mode-major, then component-major, then
row-major over the interior nodes.

For mode ``m`` the interior equation is

    div(mu : grad u_m) - sum_n s_mn u_n - sum_{l,n} a_mnl (u_l . grad) u_n - grad p_m = 0

with the convection term frozen at the previous Picard iterate, together with
``u_m = 0`` (eliminated) and ``d_nu u_m = f_m`` on the boundary (penalised).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import lsq, time_basis
from .errors import ConfigurationError, ShapeError
from .spatial import DIM, assemble_diffusion, gradients, interior_stencils, neumann_operator

_MOD = "reduced_model"

REGULARIZER_TERMS = ("I", "x", "y", "xx", "yy", "xy")


def project_boundary_data(trace, times, basis):
    """Mode-wise boundary data ``f_m = int exp(-2t) f(x, t) Psi_m(t) dt``.

    Parameters
    ----------
    trace : ndarray, shape (n_times, n_boundary, 2)
        Normal-derivative samples at the instants ``times``.
    times : ndarray, shape (n_times,)
    basis : BasisTable

    Returns
    -------
    ndarray, shape (N+1, n_boundary, 2)
    """
    trace = np.asarray(trace, dtype=float)
    times = np.asarray(times, dtype=float)
    if trace.ndim != 3 or trace.shape[2] != DIM:
        raise ShapeError(f"trace must have shape (n_times, n_boundary, 2), got {trace.shape}", _MOD)
    tol = 1e-9 * basis.T
    if times[0] > tol or times[-1] < basis.T - tol:
        raise ConfigurationError(
            f"trace covers [{times[0]:g}, {times[-1]:g}] but the basis needs [0, {basis.T:g}]", _MOD)
    return time_basis.fourier_coefficients(trace, basis, times=times)


def assemble_interior_blocks(mu, grid, S):
    """Block operator ``r_m = L u_m - sum_n s_mn u_n`` on interior unknowns of a mode stack."""
    L = assemble_diffusion(grid, mu)
    n_modes = S.shape[0]
    n = L.shape[0]
    return (sp.kron(sp.identity(n_modes), L) - sp.kron(sp.csr_matrix(S), sp.identity(n))).tocsr()


def convection_source(U_prev, A, grid):
    """``sum_{l,n} a_mnl (u_l . grad) u_n`` for every mode m; zero on the boundary.

    Gradients of all modes are taken once; the double sum is two tensor
    contractions, first over n, then over l and the velocity component.
    """
    U_prev = np.asarray(U_prev, dtype=float)
    n_modes = A.shape[0]
    if U_prev.shape != (n_modes, DIM) + grid.shape:
        raise ShapeError(f"mode stack shape {U_prev.shape} does not match "
                         f"{(n_modes, DIM) + grid.shape}", _MOD)
    gx, gy = gradients(U_prev, grid.hx, grid.hy)          # (n, c, p, q)
    vel = U_prev[:, :, 1:-1, 1:-1]                          # (l, comp, p, q)
    # G[m, l, c, p, q] = sum_n a_mnl g[n, c, p, q]
    Gx = np.tensordot(A, gx, axes=([1], [0]))
    Gy = np.tensordot(A, gy, axes=([1], [0]))
    inner = (np.einsum("lpq,mlcpq->mcpq", vel[:, 0], Gx, optimize=True)
             + np.einsum("lpq,mlcpq->mcpq", vel[:, 1], Gy, optimize=True))
    out = np.zeros((n_modes, DIM) + grid.shape)
    out[:, :, 1:-1, 1:-1] = inner
    return out


def stack_to_vector(U, grid):
    U = np.asarray(U, dtype=float)
    return U.reshape(U.shape[0], DIM, -1)[:, :, grid.interior_index].ravel()


def vector_to_stack(x, grid, n_modes):
    x = np.asarray(x, dtype=float).reshape(n_modes, DIM, grid.n_interior)
    out = np.zeros((n_modes, DIM, grid.n_nodes))
    out[:, :, grid.interior_index] = x
    return out.reshape((n_modes, DIM) + grid.shape)


@dataclass(frozen=True)
class BlockWeights:
    """Row scalings of the three blocks; `None` means the discrete measure default."""

    interior: float = None
    boundary: float = None
    regularizer: float = 1.0


@dataclass
class LeastSquaresSystem:
    """Design matrix ``[W_i K; W_b B; sqrt(eps) W_i H]`` and right-hand side.

    ``blocks`` maps block names to row slices of ``matrix``.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict
    n_modes: int
    grid: object
    eps: float
    weights: dict = field(default_factory=dict)
    assembler: object = None

    @property
    def n_unknowns(self):
        return self.matrix.shape[1]

    def residual(self, x):
        return self.matrix @ x - self.rhs

    def objective_parts(self, x):
        r = self.residual(x)
        return {name: float(r[s] @ r[s]) for name, s in self.blocks.items()}


class SystemAssembler:
    """Builds the design matrix once and the right-hand side per Picard iterate.

    The matrix depends only on (grid, mu, S, eps, weights); it is shared
    unchanged by every `LeastSquaresSystem` this object produces.
    """

    def __init__(self, grid, mu, couplings, eps, weights=None):
        if not eps > 0:
            raise ConfigurationError(f"regularisation eps must be positive, got {eps}", _MOD)
        weights = weights or BlockWeights()
        self.grid = grid
        self.mu = mu
        self.couplings = couplings
        self.eps = float(eps)
        self.n_modes = couplings.S.shape[0]
        w_int = weights.interior if weights.interior is not None else np.sqrt(grid.hx * grid.hy)
        w_bnd = weights.boundary
        seg = np.sqrt(grid.boundary_segment_lengths()) if w_bnd is None else np.full(grid.n_boundary, w_bnd)
        w_reg = weights.regularizer * np.sqrt(self.eps) * w_int
        self.weights = {"interior": float(w_int), "boundary": seg, "regularizer": float(w_reg)}

        n_modes = self.n_modes
        eye_m = sp.identity(n_modes, format="csr")
        K = assemble_interior_blocks(mu, grid, couplings.S)
        self.interior_blocks = K
        Wb = sp.diags(np.tile(seg, DIM))
        self.spatial_L = assemble_diffusion(grid, mu)
        self.spatial_B = (Wb @ neumann_operator(grid)).tocsr()
        st = interior_stencils(grid)
        self.spatial_H = w_reg * sp.vstack([sp.block_diag([st[t]] * DIM) for t in REGULARIZER_TERMS],
                                           format="csr")
        B = sp.kron(eye_m, self.spatial_B)
        H = sp.kron(eye_m, self.spatial_H)
        self.matrix = sp.vstack([w_int * K, B, H], format="csr")
        self._normal_solver = None
        n_i, n_b = K.shape[0], B.shape[0]
        self.blocks = {
            "interior": slice(0, n_i),
            "boundary": slice(n_i, n_i + n_b),
            "regularizer": slice(n_i + n_b, self.matrix.shape[0]),
        }
        self._bnd_weights = np.tile(seg, DIM)

    def normal_solver(self):
        """Structured normal-equation solver, factorised on first use and cached."""
        if self._normal_solver is None:
            S = np.asarray(self.couplings.S)
            sig, vec = np.linalg.eigh(S + S.T - 2.0 * np.eye(self.n_modes))
            q_end = np.sqrt(max(sig[-1], 0.0)) * vec[:, -1]
            q_start = np.sqrt(max(-sig[0], 0.0)) * vec[:, 0]
            G = (self.spatial_B.T @ self.spatial_B + self.spatial_H.T @ self.spatial_H).tocsr()
            self._normal_solver = lsq.KroneckerNormalSolver(
                self.spatial_L, S, q_end, q_start, G, self.weights["interior"])
        return self._normal_solver

    def rhs(self, U_prev=None, boundary_modes=None, pressure_modes=None, convection=True):
        """Right-hand side for the iterate after ``U_prev``.

        ``pressure_modes`` are the mode-wise pressure gradients ``grad p_m``
        as a stack of shape (N+1, 2, ny, nx).
        """
        g = self.grid
        n_modes = self.n_modes
        src = np.zeros((n_modes, DIM) + g.shape)
        if convection and U_prev is not None:
            src += convection_source(U_prev, self.couplings.A, g)
        if pressure_modes is not None:
            p = np.asarray(pressure_modes, dtype=float)
            if p.shape != src.shape:
                raise ShapeError(f"pressure modes shape {p.shape} != {src.shape}", _MOD)
            src += p
        b_int = self.weights["interior"] * stack_to_vector(src, g)

        b_bnd = np.zeros(self.blocks["boundary"].stop - self.blocks["boundary"].start)
        if boundary_modes is not None:
            f = np.asarray(boundary_modes, dtype=float)
            if f.shape != (n_modes, g.n_boundary, DIM):
                raise ShapeError(f"boundary modes shape {f.shape} != "
                                 f"{(n_modes, g.n_boundary, DIM)}", _MOD)
            # component-major rows within each mode
            b_bnd = (f.transpose(0, 2, 1).reshape(n_modes, -1) * self._bnd_weights).ravel()
        n_reg = self.blocks["regularizer"].stop - self.blocks["regularizer"].start
        return np.concatenate([b_int, b_bnd, np.zeros(n_reg)])

    def system(self, U_prev=None, boundary_modes=None, pressure_modes=None, convection=True):
        return LeastSquaresSystem(
            matrix=self.matrix,
            rhs=self.rhs(U_prev, boundary_modes, pressure_modes, convection),
            blocks=dict(self.blocks),
            n_modes=self.n_modes,
            grid=self.grid,
            eps=self.eps,
            weights=dict(self.weights),
            assembler=self,
        )


def assemble_system(U_prev, mu, grid, basis, couplings, boundary_modes, pressure_modes=None,
                    eps=1e-6, weights=None, convection=True):
    """One-shot assembly of the least-squares system for the next Picard iterate.

    ``basis`` is accepted for interface symmetry; the couplings already
    encode everything needed from it.
    """
    if couplings is None:
        couplings = time_basis.CouplingCoefficients.from_basis(basis)
    asm = SystemAssembler(grid, mu, couplings, eps, weights)
    return asm.system(U_prev, boundary_modes, pressure_modes, convection)
