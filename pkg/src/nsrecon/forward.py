"""Synthetic boundary data: semi-implicit time stepping of the anisotropic flow.

Each step solves

    (I / dt - L) u^{k+1} = u^k / dt - (u^k . grad) u^k - grad p^k

on interior nodes with ``u = 0`` on the boundary. ``L`` does not change, so
its shifted matrix is factorised once and reused for every step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, DomainError, ShapeError, SolverError
from .spatial import Grid2D, ViscosityTensor, assemble_diffusion, convection, neumann_trace

_MOD = "forward_solver"

log = logging.getLogger(__name__)


@dataclass
class ForwardConfig:
    grid: Grid2D = field(default_factory=lambda: Grid2D.square(41))
    T: float = 1.0
    n_steps: int = 700
    mu: ViscosityTensor = field(default_factory=ViscosityTensor.reference)
    # callable t -> (2, ny, nx) field, or None for a zero pressure gradient
    pressure_gradient: object = None
    convection: bool = True

    def __post_init__(self):
        if not self.T > 0 or int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(
                f"need T > 0 and a positive integer step count (T={self.T}, n_steps={self.n_steps})", _MOD)

    @property
    def dt(self):
        return self.T / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass
class BoundaryTimeSeries:
    """Normal-derivative samples ``values[k, b, c]`` at ``times[k]``."""

    values: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.values.ndim != 3 or self.values.shape[0] != self.times.shape[0]:
            raise ConfigurationError(
                f"trace values {self.values.shape} inconsistent with {self.times.shape[0]} times", _MOD)


@dataclass(frozen=True)
class NoiseSpec:
    delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ConfigurationError(f"noise level must be non-negative, got {self.delta}", _MOD)


class Stepper:
    """Holds the factorised step matrix for one configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        g = cfg.grid
        L = assemble_diffusion(g, cfg.mu)
        n = L.shape[0]
        self.matrix = (sp.identity(n) / cfg.dt - L).tocsc()
        self.lu = spla.splu(self.matrix)

    def rhs(self, u_prev, t_prev=0.0):
        cfg, g = self.cfg, self.cfg.grid
        f = u_prev / cfg.dt
        if cfg.convection:
            f = f - convection(u_prev, u_prev, g)
        if cfg.pressure_gradient is not None:
            f = f - g.check_field(cfg.pressure_gradient(t_prev))
        return g.to_interior(f)

    def __call__(self, u_prev, t_prev=0.0):
        g = self.cfg.grid
        b = self.rhs(u_prev, t_prev)
        x = self.lu.solve(b)
        res = np.linalg.norm(self.matrix @ x - b)
        bn = np.linalg.norm(b)
        if bn > 0 and res > 1e-10 * bn:
            # one step of iterative refinement before giving up
            x += self.lu.solve(b - self.matrix @ x)
            res = np.linalg.norm(self.matrix @ x - b)
            if res > 1e-10 * bn:
                raise SolverError(f"step solve relative residual {res / bn:.3e}", _MOD, residual=res / bn)
        return g.from_interior(x)


def step(u_prev, cfg, stepper=None, t_prev=0.0):
    """Advance one time step. ``u_prev`` must vanish on the boundary."""
    stepper = stepper or Stepper(cfg)
    return stepper(u_prev, t_prev)


def run_forward(U0, cfg, keep_snapshots=True):
    """Integrate from ``U0`` for ``cfg.n_steps`` steps.

    Returns
    -------
    snapshots : ndarray (n_steps+1, 2, ny, nx) or None
    trace : BoundaryTimeSeries
        Outward normal derivative at every step, including t = 0.
    """
    g = cfg.grid
    u = g.check_field(U0).copy()
    # the Dirichlet condition holds exactly for every snapshot
    u[:, 0, :] = u[:, -1, :] = 0.0
    u[:, :, 0] = u[:, :, -1] = 0.0
    stepper = Stepper(cfg)
    times = cfg.times
    values = np.empty((cfg.n_steps + 1, g.n_boundary, 2))
    values[0] = neumann_trace(u, g)
    snaps = np.empty((cfg.n_steps + 1, 2) + g.shape) if keep_snapshots else None
    if keep_snapshots:
        snaps[0] = u
    for k in range(cfg.n_steps):
        u = stepper(u, times[k])
        if not np.all(np.isfinite(u)):
            raise SolverError(f"non-finite velocity at step {k + 1}", _MOD)
        values[k + 1] = neumann_trace(u, g)
        if keep_snapshots:
            snaps[k + 1] = u
    return snaps, BoundaryTimeSeries(values, times)


def noise_draws(shape, seed):
    """The ``r ~ U[-1, 1]`` samples used by `add_noise` for a given seed."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=shape)


def add_noise(f_star, spec, r=None):
    """Multiplicative noise ``f = f* (1 + delta r)``, ``r ~ U[-1, 1]`` i.i.d. per sample.

    ``r`` may be supplied by a caller that owns the random stream; otherwise
    it is drawn from a generator seeded with ``spec.seed``.
    """
    if spec.delta == 0:
        return BoundaryTimeSeries(f_star.values.copy(), f_star.times.copy())
    if r is None:
        r = noise_draws(f_star.values.shape, spec.seed)
    r = np.asarray(r, dtype=float)
    if r.shape != f_star.values.shape:
        raise ShapeError(f"noise draws {r.shape} do not match trace {f_star.values.shape}", _MOD)
    return BoundaryTimeSeries(f_star.values * (1.0 + spec.delta * r), f_star.times.copy())


def reference_masks(test_id, grid):
    """Boolean supports of the two components of a reference initial field."""
    X, Y = grid.mesh()
    if test_id == 1:
        m1 = 8 * (X - 0.4) ** 2 + Y ** 2 < 0.64
        m2 = X ** 2 + 8 * (Y - 0.3) ** 2 < 0.64
    elif test_id == 2:
        m1 = 1.5 * (X + Y) ** 2 + Y ** 2 < 0.49
        m2 = X ** 2 + 1.5 * (X - Y) ** 2 < 0.49
    elif test_id == 3:
        r2 = X ** 2 + Y ** 2
        m1 = (0.36 < r2) & (r2 < 0.81)
        box = np.maximum(np.abs(X), np.abs(Y))
        m2 = (0.6 < box) & (box < 0.9)
    else:
        raise DomainError(f"unknown test id {test_id!r}; expected 1, 2 or 3", _MOD)
    return np.stack([m1, m2])


TEST_AMPLITUDE = {1: 4.0, 2: 1.0, 3: 1.0}


def make_test_field(test_id, grid):
    """Indicator-function initial velocity of reference test 1, 2 or 3, sampled at nodes."""
    masks = reference_masks(test_id, grid)
    return TEST_AMPLITUDE[test_id] * masks.astype(float)
