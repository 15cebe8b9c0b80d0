"""End-to-end orchestration: configuration, synthetic data, inversion, artifacts.

Configuration is a JSON object; every key is optional and defaults to the
reference experiment (41x41 grid on (-1, 1)^2, T = 1, 700 steps, N = 30,
eps = 1e-6, K = 10, 10% noise). See `CONFIG_SCHEMA` for the accepted keys.
All randomness comes from one generator created here from ``noise.seed``.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import scipy.io

from . import forward, inverse, io, reduced, time_basis
from .errors import ConfigurationError
from .spatial import REFERENCE_MU_FLAT, Grid2D, ViscosityTensor

_MOD = "pipeline_cli"

log = logging.getLogger(__name__)

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {"type": "integer", "minimum": 3, "description": "nodes per side on (-1, 1)^2"},
        "T": {"type": "number", "exclusiveMinimum": 0},
        "n_steps": {"type": "integer", "minimum": 1},
        "N": {"type": "integer", "minimum": 0, "description": "highest time mode"},
        "n_quad": {"type": ["integer", "null"], "minimum": 1},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "K": {"type": "integer", "minimum": 1, "description": "maximum Picard iterations"},
        "stop_tol": {"type": "number", "minimum": 0},
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "test_id": {"type": ["integer", "null"], "enum": [1, 2, 3, None]},
        "initial_field": {"type": ["string", "null"], "description": "field CSV used instead of test_id"},
        "pressure_field": {"type": ["string", "null"],
                           "description": "time-independent pressure gradient as a field CSV"},
        "convection": {"type": "boolean"},
        "mu_flat": {"type": "array", "minItems": 4, "maxItems": 4,
                    "items": {"type": "array", "minItems": 4, "maxItems": 4, "items": {"type": "number"}}},
        "lambda": {"type": "number", "description": "recorded for reference; not used"},
        "method": {"enum": ["auto", "kronecker", "lsqr", "splu", "dense"]},
        "out": {"type": ["string", "null"]},
    },
}


@dataclass
class RunConfig:
    grid: int = 41
    T: float = 1.0
    n_steps: int = 700
    N: int = 30
    n_quad: int = None
    eps: float = 1e-6
    K: int = 10
    stop_tol: float = 1e-6
    noise: dict = field(default_factory=lambda: {"delta": 0.1, "seed": 0})
    test_id: int = 1
    initial_field: str = None
    pressure_field: str = None
    convection: bool = True
    mu_flat: list = field(default_factory=lambda: REFERENCE_MU_FLAT.tolist())
    lam: float = 2.0
    method: str = "auto"
    out: str = None

    # --- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, d):
        """Build and validate a config from a JSON object (a meta.json is accepted too)."""
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a JSON object", _MOD)
        if "config" in d and isinstance(d["config"], dict):
            d = d["config"]
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"invalid config at {where}: {exc.message}", _MOD) from None
        kw = dict(d)
        if "lambda" in kw:
            kw["lam"] = kw.pop("lambda")
        noise = {"delta": 0.1, "seed": 0}
        noise.update(kw.pop("noise", {}))
        cfg = cls(noise=noise, **kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        return cls.from_dict(io.read_json(path))

    def with_overrides(self, **flags):
        """Copy with the non-None entries of ``flags`` applied; ``delta``/``seed`` go into ``noise``."""
        d = self.to_dict()
        for key, val in flags.items():
            if val is None:
                continue
            if key in ("delta", "seed"):
                d["noise"][key] = val
            else:
                d["lambda" if key == "lam" else key] = val
        if flags.get("test_id") is not None:
            d["initial_field"] = None
        return RunConfig.from_dict(d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        d["noise"] = dict(d["noise"])
        return d

    # --- checks ------------------------------------------------------------
    def validate(self):
        if self.test_id is None and self.initial_field is None:
            raise ConfigurationError("need either test_id or initial_field", _MOD)
        if self.test_id is not None and self.test_id not in forward.TEST_AMPLITUDE:
            raise ConfigurationError(f"unknown test_id {self.test_id!r}; expected 1, 2 or 3", _MOD)
        for key in ("initial_field", "pressure_field"):
            p = getattr(self, key)
            if p is None:
                continue
            if not Path(p).is_file():
                raise ConfigurationError(f"{key} file {p!r} does not exist", _MOD)
            # shape and node coordinates are checked against the configured grid
            io.read_field(p, self.make_grid())
        if self.n_quad is not None:
            # certification is cheap; failing here keeps bad runs from writing anything
            time_basis.build_basis_table(self.N, self.T, self.n_quad)
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ConfigurationError(f"eps must be a positive number, got {self.eps}", _MOD)
        mu = np.asarray(self.mu_flat, dtype=float)
        if mu.shape != (4, 4) or not np.all(np.isfinite(mu)):
            raise ConfigurationError("mu_flat must be a finite 4x4 array", _MOD)
        return self

    # --- derived objects ---------------------------------------------------
    @property
    def viscosity(self):
        return ViscosityTensor(np.asarray(self.mu_flat, dtype=float))

    def make_grid(self):
        return Grid2D.square(self.grid)

    def forward_config(self, pressure=None):
        grad = None if pressure is None else (lambda t: pressure)
        return forward.ForwardConfig(grid=self.make_grid(), T=self.T, n_steps=self.n_steps,
                                     mu=self.viscosity, pressure_gradient=grad,
                                     convection=self.convection)

    @property
    def noise_spec(self):
        return forward.NoiseSpec(float(self.noise["delta"]), int(self.noise["seed"]))


@dataclass
class SimulationResult:
    u_true: np.ndarray
    clean: forward.BoundaryTimeSeries
    trace: forward.BoundaryTimeSeries
    grid: Grid2D


@dataclass
class RunResult:
    config: RunConfig
    grid: Grid2D
    state: inverse.PicardState
    reconstruction: inverse.ReconstructionResult
    u_true: np.ndarray = None

    @property
    def metrics(self):
        return self.reconstruction.metrics


def initial_field(cfg, grid):
    if cfg.initial_field is not None:
        u, _ = io.read_field(cfg.initial_field, grid)
        return u
    return forward.make_test_field(cfg.test_id, grid)


def pressure_field(cfg, grid):
    if cfg.pressure_field is None:
        return None
    p, _ = io.read_field(cfg.pressure_field, grid)
    return p


def region_masks(cfg, grid, u_true):
    """Supports used for the maxima: the test's shapes, or the nonzero set of a supplied field."""
    if cfg.initial_field is None:
        return forward.reference_masks(cfg.test_id, grid)
    masks = u_true != 0
    for c in range(masks.shape[0]):
        if not masks[c].any():
            # an identically zero component: its maximum is taken over the whole grid
            masks[c] = True
    return masks


def simulate(cfg):
    """Forward run plus noise. The only random draws of a run happen here."""
    grid = cfg.make_grid()
    u_true = initial_field(cfg, grid)
    fcfg = cfg.forward_config(pressure_field(cfg, grid))
    _, clean = forward.run_forward(u_true, fcfg, keep_snapshots=False)
    rng = np.random.default_rng(cfg.noise_spec.seed)
    r = rng.uniform(-1.0, 1.0, size=clean.values.shape)
    noisy = forward.add_noise(clean, cfg.noise_spec, r=r)
    # the forward run zeroes boundary values; report the field actually used
    u_used = u_true.copy()
    u_used[:, [0, -1], :] = 0.0
    u_used[:, :, [0, -1]] = 0.0
    return SimulationResult(u_used, clean, noisy, grid)


def pressure_modes(cfg, grid, basis):
    """Mode stack of a time-independent pressure gradient, or None."""
    p = pressure_field(cfg, grid)
    if p is None:
        return None
    c = time_basis.fourier_coefficients(np.ones(len(basis.nodes)), basis)
    return c[:, None, None, None] * p[None]


def invert(cfg, values, times, u_true=None, dump_dir=None):
    """Project the trace, run the Picard iteration and reconstruct the initial field."""
    grid = cfg.make_grid()
    basis = time_basis.build_basis_table(cfg.N, cfg.T, cfg.n_quad)
    couplings = time_basis.CouplingCoefficients.from_basis(basis)
    f_modes = reduced.project_boundary_data(values, times, basis)
    p_modes = pressure_modes(cfg, grid, basis)
    asm = reduced.SystemAssembler(grid, cfg.viscosity, couplings, cfg.eps)
    if dump_dir is not None:
        dump_system(asm.system(None, f_modes, p_modes, convection=False), dump_dir)
    state = inverse.picard_run(asm, f_modes, K=cfg.K, stop_tol=cfg.stop_tol, pressure_modes=p_modes,
                               convection=cfg.convection, method=cfg.method)
    rec = inverse.reconstruct(state.U, basis)
    if u_true is not None:
        rec.metrics = inverse.compute_metrics(rec.u0_comp, u_true, region_masks(cfg, grid, u_true))
    return RunResult(cfg, grid, state, rec, u_true)


def dump_system(system, outdir):
    """Design matrix and right-hand side of the first Picard system in MatrixMarket format."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(outdir / "system_matrix.mtx"), system.matrix, precision=17)
    scipy.io.mmwrite(str(outdir / "system_rhs.mtx"), system.rhs[:, None], precision=17)


def metrics_record(run):
    """Content of metrics.json; depends only on numbers computed from the config."""
    st = run.state
    return {
        "metrics": run.metrics,
        "picard": {
            "iterations": st.k,
            "increments": list(st.increments),
            "degenerate": st.degenerate,
        },
    }


def emit_plot_data(run, outdir):
    """Files needed to draw the true field, the computed field and the convergence history."""
    outdir = io.ensure_writable(outdir)
    io.write_field(outdir / "u0_comp.csv", run.reconstruction.u0_comp, run.grid)
    if run.u_true is not None:
        io.write_field(outdir / "u_true_t0.csv", run.u_true, run.grid)
    io.write_convergence(outdir / "convergence.csv", run.state.increments)


def write_modes(run, outdir):
    for m, u in enumerate(run.reconstruction.U_comp):
        io.write_field(Path(outdir) / "modes" / f"u_{m:03d}.csv", u, run.grid)


def write_meta(cfg, outdir, extra=None):
    meta = {"config": cfg.to_dict(), "dt": cfg.T / cfg.n_steps}
    meta.update(extra or {})
    io.write_json(Path(outdir) / "meta.json", meta)


def run_simulate(cfg, outdir):
    outdir = io.ensure_writable(outdir)
    sim = simulate(cfg)
    io.write_trace(outdir / "trace.csv", sim.trace, sim.grid)
    io.write_field(outdir / "u_true_t0.csv", sim.u_true, sim.grid)
    write_meta(cfg, outdir)
    return sim


def run_invert(cfg, datadir, outdir, save_modes=False, dump=False):
    """Inversion from a ``simulate`` directory holding trace.csv (and u_true_t0.csv if known)."""
    datadir = Path(datadir)
    grid = cfg.make_grid()
    values, times = io.read_trace(datadir / "trace.csv", grid)
    truth = datadir / "u_true_t0.csv"
    u_true = io.read_field(truth, grid)[0] if truth.is_file() else None
    outdir = io.ensure_writable(outdir)
    run = invert(cfg, values, times, u_true, dump_dir=outdir if dump else None)
    _write_inversion(run, outdir, save_modes)
    return run


def run_full(cfg, outdir, save_modes=False, dump=False):
    """simulate -> noise -> project -> Picard -> reconstruct -> metrics, with all artifacts."""
    outdir = io.ensure_writable(outdir)
    sim = run_simulate(cfg, outdir)
    run = invert(cfg, sim.trace.values, sim.trace.times, sim.u_true,
                 dump_dir=outdir if dump else None)
    _write_inversion(run, outdir, save_modes)
    return run


def _write_inversion(run, outdir, save_modes):
    emit_plot_data(run, outdir)
    if save_modes:
        write_modes(run, outdir)
    io.write_json(Path(outdir) / "metrics.json", metrics_record(run))
    write_meta(run.config, outdir)


def run_basis_tables(cfg, outdir):
    outdir = io.ensure_writable(outdir)
    basis = time_basis.build_basis_table(cfg.N, cfg.T, cfg.n_quad)
    io.write_coupling_tables(outdir, time_basis.CouplingCoefficients.from_basis(basis))
    write_meta(cfg, outdir)
