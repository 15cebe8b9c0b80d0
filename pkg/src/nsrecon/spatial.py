"""Finite differences on a uniform rectangular grid.

Vector fields are plain arrays of shape ``(2, ny, nx)``: component first, then
rows over y and columns over x. Sparse operators act on component-major,
row-major flattenings of either the full grid or the interior nodes only
(boundary values are then taken to be zero).
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ShapeError

_MOD = "spatial_disc"

DIM = 2

REFERENCE_MU_FLAT = np.array([
    [1.0, 1 / 16, 1 / 16, 3 / 8],
    [1 / 16, 1 / 4, 1 / 4, 0.0],
    [1 / 16, 1 / 4, 1 / 4, 0.0],
    [3 / 8, 0.0, 0.0, 1 / 2],
])


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x_min: float = -1.0
    x_max: float = 1.0
    y_min: float = -1.0
    y_max: float = 1.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ConfigurationError(f"grid needs at least 3x3 nodes, got {self.nx}x{self.ny}", _MOD)
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigurationError("empty grid bounds", _MOD)

    @classmethod
    def square(cls, n, lo=-1.0, hi=1.0):
        return cls(n, n, lo, hi, lo, hi)

    @property
    def hx(self):
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self):
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y(self):
        return np.linspace(self.y_min, self.y_max, self.ny)

    def mesh(self):
        """``X, Y`` arrays of shape (ny, nx)."""
        return np.meshgrid(self.x, self.y, indexing="xy")

    @cached_property
    def interior_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    @cached_property
    def interior_index(self):
        """Flat (row-major) indices of interior nodes."""
        return np.flatnonzero(self.interior_mask)

    @property
    def n_interior(self):
        return (self.nx - 2) * (self.ny - 2)

    @cached_property
    def boundary_nodes(self):
        """Boundary nodes without corners as ``(j, i, nu_x, nu_y)`` rows.

        Faces are listed counter-clockwise starting at the bottom face, each
        traversed in increasing coordinate order.
        """
        nx, ny = self.nx, self.ny
        rows = []
        rows += [(0, i, 0, -1) for i in range(1, nx - 1)]
        rows += [(j, nx - 1, 1, 0) for j in range(1, ny - 1)]
        rows += [(ny - 1, i, 0, 1) for i in range(1, nx - 1)]
        rows += [(j, 0, -1, 0) for j in range(1, ny - 1)]
        return np.array(rows, dtype=int)

    @property
    def n_boundary(self):
        return len(self.boundary_nodes)

    def boundary_coordinates(self):
        b = self.boundary_nodes
        return self.x[b[:, 1]], self.y[b[:, 0]]

    def boundary_segment_lengths(self):
        """Length of boundary attributed to each trace node (h of its face)."""
        b = self.boundary_nodes
        return np.where(b[:, 2] != 0, self.hy, self.hx)

    def zeros(self):
        return np.zeros((DIM,) + self.shape)

    def check_field(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (DIM,) + self.shape:
            raise ShapeError(f"field shape {u.shape} does not match grid {(DIM,) + self.shape}", _MOD)
        return u

    def to_interior(self, u):
        """(2, ny, nx) field -> flat vector of interior values, component-major."""
        u = self.check_field(u)
        return u.reshape(DIM, -1)[:, self.interior_index].ravel()

    def from_interior(self, v):
        """Inverse of `to_interior`; boundary values are zero."""
        v = np.asarray(v, dtype=float).reshape(DIM, self.n_interior)
        out = np.zeros((DIM, self.n_nodes))
        out[:, self.interior_index] = v
        return out.reshape((DIM,) + self.shape)


@dataclass(frozen=True)
class ViscosityTensor:
    """Fourth-order tensor stored flattened: ``mu_ijkl = mu_flat[2i + j, 2k + l]`` (0-based)."""

    mu_flat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mu_flat, dtype=float)
        if m.shape != (4, 4):
            raise ConfigurationError(f"mu_flat must be 4x4, got {m.shape}", _MOD)
        m.setflags(write=False)
        object.__setattr__(self, "mu_flat", m)

    @classmethod
    def reference(cls):
        return cls(REFERENCE_MU_FLAT)

    @classmethod
    def isotropic_identity(cls):
        return cls(np.eye(4))

    def __getitem__(self, ijkl):
        i, j, k, l = ijkl
        return self.mu_flat[2 * i + j, 2 * k + l]

    def __hash__(self):
        return hash(self.mu_flat.tobytes())

    def __eq__(self, other):
        return isinstance(other, ViscosityTensor) and np.array_equal(self.mu_flat, other.mu_flat)

    def is_symmetric(self, tol=1e-14):
        return bool(np.max(np.abs(self.mu_flat - self.mu_flat.T)) <= tol)


def coercivity_report(mu):
    """Smallest eigenvalue of the quadratic form on symmetric 2x2 matrices and on all of R^{2x2}.

    A non-symmetric tensor is symmetrised (only the symmetric part enters a
    quadratic form); the caller can check `ViscosityTensor.is_symmetric`.
    """
    m = mu.mu_flat
    m = 0.5 * (m + m.T)
    r = np.sqrt(0.5)
    sym_basis = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, r, r, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]).T
    min_sym = np.linalg.eigvalsh(sym_basis.T @ m @ sym_basis)[0]
    min_full = np.linalg.eigvalsh(m)[0]
    return float(min_sym), float(min_full)


# --- sparse stencils --------------------------------------------------------

def _d1(n, h):
    return sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n)) / (2.0 * h)


def _d2(n, h):
    return sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / (h * h)


@lru_cache(maxsize=16)
def scalar_stencils(grid):
    """Central-difference operators on the full grid (rows at boundary nodes are not meaningful)."""
    ix = sp.identity(grid.nx)
    iy = sp.identity(grid.ny)
    dx, dy = _d1(grid.nx, grid.hx), _d1(grid.ny, grid.hy)
    ops = {
        "I": sp.identity(grid.n_nodes),
        "x": sp.kron(iy, dx),
        "y": sp.kron(dy, ix),
        "xx": sp.kron(iy, _d2(grid.nx, grid.hx)),
        "yy": sp.kron(_d2(grid.ny, grid.hy), ix),
        "xy": sp.kron(dy, dx),
    }
    return {k: v.tocsr() for k, v in ops.items()}


@lru_cache(maxsize=16)
def interior_stencils(grid):
    """Same stencils restricted to interior rows and interior columns (zero Dirichlet values)."""
    idx = grid.interior_index
    return {k: v[idx][:, idx].tocsr() for k, v in scalar_stencils(grid).items()}


def _diffusion_blocks(grid, mu, ops):
    blocks = [[None] * DIM for _ in range(DIM)]
    for i in range(DIM):
        for k in range(DIM):
            blocks[i][k] = (mu[i, 0, k, 0] * ops["xx"] + mu[i, 1, k, 1] * ops["yy"]
                            + (mu[i, 0, k, 1] + mu[i, 1, k, 0]) * ops["xy"])
    return sp.bmat(blocks, format="csr")


def assemble_diffusion(grid, mu, dirichlet=True):
    """Discrete ``div(mu : grad u)`` at interior nodes.

    With constant ``mu`` the operator is
    ``L(u)_i = sum_{j,k,l} mu_ijkl d_j d_l u_k``; second derivatives use the
    3-point stencil and the mixed derivative the 4-point cross stencil.

    Parameters
    ----------
    grid : Grid2D
    mu : ViscosityTensor
    dirichlet : bool
        If True (default) the operator acts on interior unknowns only, with
        zero boundary values eliminated, and is square. Otherwise it maps a
        full-grid field (flattened component-major) to interior values.

    Returns
    -------
    scipy.sparse.csr_matrix
    """
    if dirichlet:
        return _diffusion_blocks(grid, mu, interior_stencils(grid))
    idx = grid.interior_index
    full = {k: v[idx] for k, v in scalar_stencils(grid).items()}
    return _diffusion_blocks(grid, mu, full)


def apply_diffusion(grid, mu, u):
    """Diffusion of a full-grid field; returns a (2, ny, nx) field, zero on the boundary."""
    u = grid.check_field(u)
    vals = assemble_diffusion(grid, mu, dirichlet=False) @ u.ravel()
    return grid.from_interior(vals)


def gradients(u, hx, hy):
    """Central x- and y-derivatives at interior nodes of a stack of fields ``(..., ny, nx)``.

    Returns two arrays of shape ``(..., ny-2, nx-2)``.
    """
    gx = (u[..., 1:-1, 2:] - u[..., 1:-1, :-2]) / (2.0 * hx)
    gy = (u[..., 2:, 1:-1] - u[..., :-2, 1:-1]) / (2.0 * hy)
    return gx, gy


def convection(a, b, grid):
    """``(a . grad) b`` at interior nodes, zero on the boundary."""
    a = grid.check_field(a)
    b = grid.check_field(b)
    gx, gy = gradients(b, grid.hx, grid.hy)
    out = grid.zeros()
    out[:, 1:-1, 1:-1] = a[0, 1:-1, 1:-1] * gx + a[1, 1:-1, 1:-1] * gy
    return out


@lru_cache(maxsize=16)
def neumann_matrix(grid):
    """Outward normal derivative at boundary nodes, acting on a full-grid scalar vector.

    One-sided second-order stencil ``(3 u_0 - 4 u_1 + u_2) / (2h)`` where
    ``u_k`` steps ``k`` nodes inward along the normal.
    """
    b = grid.boundary_nodes
    nb = len(b)
    rows = np.repeat(np.arange(nb), 3)
    cols = np.empty(3 * nb, dtype=int)
    vals = np.empty(3 * nb)
    for r, (j, i, nu_x, nu_y) in enumerate(b):
        h = grid.hx if nu_x != 0 else grid.hy
        for k, c in enumerate((1.5, -2.0, 0.5)):
            jj = j - k * nu_y
            ii = i - k * nu_x
            cols[3 * r + k] = jj * grid.nx + ii
            vals[3 * r + k] = c / h
    return sp.csr_matrix((vals, (rows, cols)), shape=(nb, grid.n_nodes))


def neumann_trace(u, grid):
    """Normal derivative of a full-grid field at boundary nodes; shape (n_boundary, 2)."""
    u = grid.check_field(u)
    B = neumann_matrix(grid)
    return np.stack([B @ u[c].ravel() for c in range(DIM)], axis=1)


def neumann_operator(grid):
    """Normal-derivative operator on interior unknowns (boundary values zero), both components.

    Rows are component-major: all boundary nodes for component 1, then component 2.
    """
    B = neumann_matrix(grid)[:, grid.interior_index]
    return sp.block_diag([B] * DIM, format="csr")
