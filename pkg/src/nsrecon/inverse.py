"""Picard iteration over regularised least-squares solves of the reduced model."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import lsq
from .errors import ConfigurationError, DomainError, SolverError
from .reduced import stack_to_vector, vector_to_stack
from .time_basis import expand

_MOD = "inverse_solver"

log = logging.getLogger(__name__)

SOLVE_RTOL = 1e-8


def solve_least_squares(system, method="auto", rtol=SOLVE_RTOL, maxiter=200, x0=None):
    """Minimiser of ``||A x - b||`` for a `LeastSquaresSystem`, returned as a mode stack.

    Methods
    -------
    ``"kronecker"``
        Conjugate gradients on the normal equations, preconditioned by the
        cached structured factorisation of the system's assembler. This is
        what ``"auto"`` picks when the system carries its assembler.
    ``"lsqr"``
        scipy LSQR.
    ``"splu"``
        Sparse LU of the normal matrix (small systems only).
    ``"dense"``
        Dense least squares; a reference for tests.
    """
    A, b = system.matrix, system.rhs
    if method == "auto":
        method = "kronecker" if system.assembler is not None else "lsqr"
    if method == "kronecker":
        if system.assembler is None:
            raise ConfigurationError("kronecker method needs a system built by SystemAssembler", _MOD)
        pre = system.assembler.normal_solver().solve
        x, rel, it = lsq.normal_cg(A, b, precond=pre, x0=x0, rtol=rtol, maxiter=maxiter)
    elif method == "lsqr":
        x, rel, it = lsq.lsqr_solve(A, b, rtol=rtol)
    elif method == "splu":
        x = lsq.sparse_normal_solve(A, b)
        rel, it = _normal_residual(A, b, x), 1
    elif method == "dense":
        x = lsq.dense_lstsq(A, b)
        rel, it = _normal_residual(A, b, x), 1
    else:
        raise ConfigurationError(f"unknown least-squares method {method!r}", _MOD)
    if not np.all(np.isfinite(x)) or rel > rtol:
        raise SolverError(f"least-squares solve ({method}) stopped at relative normal residual "
                          f"{rel:.3e} after {it} iterations", _MOD, residual=rel)
    log.debug("lsq %s: rel %.2e in %d its", method, rel, it)
    return vector_to_stack(x, system.grid, system.n_modes)


def _normal_residual(A, b, x):
    g = A.T @ b
    gn = np.linalg.norm(g)
    return 0.0 if gn == 0 else float(np.linalg.norm(g - A.T @ (A @ x)) / gn)


def relative_increment(U_new, U_old):
    """``||U_new - U_old||_inf / ||U_new||_inf`` over all modes, components and nodes.

    Returns +inf when ``U_new`` is identically zero.
    """
    top = np.max(np.abs(U_new - U_old))
    bottom = np.max(np.abs(U_new))
    if bottom == 0.0:
        return math.inf
    return float(top / bottom)


@dataclass
class PicardState:
    k: int
    U: np.ndarray
    increments: list = field(default_factory=list)
    degenerate: bool = False

    @property
    def log_increments(self):
        return [math.log(v) if 0 < v < math.inf else (-math.inf if v == 0 else math.inf)
                for v in self.increments]


def picard_run(assembler, boundary_modes, K=10, stop_tol=1e-6, pressure_modes=None,
               convection=True, method="auto", callback=None):
    """Picard iteration from the zero stack.

    Each iterate minimises the least-squares functional with the convection
    term frozen at the previous iterate. Stops after ``K`` iterations or
    once the relative increment falls below ``stop_tol``.
    """
    if int(K) != K or K < 1:
        raise ConfigurationError(f"Picard iteration count must be >= 1, got {K}", _MOD)
    g = assembler.grid
    U = np.zeros((assembler.n_modes, 2) + g.shape)
    state = PicardState(0, U, [])
    for k in range(1, int(K) + 1):
        system = assembler.system(U, boundary_modes, pressure_modes, convection=convection)
        x0 = stack_to_vector(U, g) if k > 1 else None
        U_new = solve_least_squares(system, method=method, x0=x0)
        inc = relative_increment(U_new, U)
        if not math.isfinite(inc):
            state.degenerate = True
        state.increments.append(inc)
        state.U = U_new
        state.k = k
        U = U_new
        log.info("picard k=%d increment=%.3e", k, inc)
        if callback is not None:
            callback(state)
        if inc < stop_tol:
            break
    return state


@dataclass
class ReconstructionResult:
    U_comp: np.ndarray
    u0_comp: np.ndarray
    basis: object
    metrics: dict = field(default_factory=dict)

    def at(self, t):
        """Reconstructed velocity at time(s) ``t``."""
        return expand(self.U_comp, self.basis, t)


def reconstruct(U_comp, basis):
    """Space-time expansion of the computed modes and the initial field ``sum_n u_n Psi_n(0)``."""
    U_comp = np.asarray(U_comp, dtype=float)
    u0 = np.tensordot(basis.psi_at_zero(), U_comp, axes=([0], [0]))
    return ReconstructionResult(U_comp, u0, basis)


def compute_metrics(u0_comp, u0_true, region_masks):
    """Component maxima over the true supports and relative errors.

    Returns a dict with, per component ``c`` (1-based), ``max_comp_c``,
    ``max_true_c``, ``rel_err_max_c``, plus ``rel_l2`` over both components.
    """
    u0_comp = np.asarray(u0_comp, dtype=float)
    u0_true = np.asarray(u0_true, dtype=float)
    masks = np.asarray(region_masks, dtype=bool)
    if u0_comp.shape != u0_true.shape or masks.shape != u0_true.shape:
        raise DomainError("computed field, true field and masks must share a shape", _MOD)
    out = {}
    for c in range(u0_true.shape[0]):
        if not masks[c].any():
            raise DomainError(f"empty region mask for component {c + 1}", _MOD)
        mc = float(np.max(u0_comp[c][masks[c]]))
        mt = float(np.max(u0_true[c][masks[c]]))
        out[f"max_comp_{c + 1}"] = mc
        out[f"max_true_{c + 1}"] = mt
        out[f"rel_err_max_{c + 1}"] = abs(mc - mt) / abs(mt) if mt != 0 else math.inf
    tn = np.linalg.norm(u0_true)
    out["rel_l2"] = float(np.linalg.norm(u0_comp - u0_true) / tn) if tn > 0 else math.inf
    return out
