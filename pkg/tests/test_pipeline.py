import json

import numpy as np
import pytest
import scipy.io

from nsrecon import cli, forward, io, pipeline, reduced, spatial, time_basis
from nsrecon.errors import ConfigurationError, SolverError

SMALL = ["--grid", "15", "--steps", "60", "--modes", "5", "--eps", "1e-3", "--iterations", "4"]


def run_cli(*args):
    return cli.main([str(a) for a in args])


class TestRunConfig:
    def test_defaults(self):
        cfg = pipeline.RunConfig()
        assert (cfg.grid, cfg.n_steps, cfg.N, cfg.eps, cfg.K) == (41, 700, 30, 1e-6, 10)
        assert cfg.noise == {"delta": 0.1, "seed": 0}
        assert cfg.to_dict()["lambda"] == 2.0

    @pytest.mark.parametrize("bad", [
        {"test_id": 7},
        {"grid": 2},
        {"eps": 0},
        {"eps": "small"},
        {"noise": {"delta": -0.1}},
        {"unknown_key": 1},
        {"mu_flat": [[1, 0], [0, 1]]},
        {"initial_field": "/does/not/exist.csv"},
        {"N": 30, "n_quad": 20},
    ])
    def test_rejected(self, bad):
        with pytest.raises(ConfigurationError):
            pipeline.RunConfig.from_dict(bad)

    def test_overrides(self):
        cfg = pipeline.RunConfig.from_dict({"eps": 1e-3, "noise": {"seed": 4}})
        new = cfg.with_overrides(delta=0.0, N=5, eps=None)
        assert new.noise == {"delta": 0.0, "seed": 4}
        assert new.N == 5 and new.eps == 1e-3

    def test_lambda_round_trip(self):
        cfg = pipeline.RunConfig.from_dict({"lambda": 3.5})
        assert cfg.lam == 3.5
        assert pipeline.RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_meta_accepted(self):
        cfg = pipeline.RunConfig.from_dict({"N": 4})
        assert pipeline.RunConfig.from_dict({"config": cfg.to_dict(), "dt": 0.1}) == cfg


class TestFileFormats:
    def test_field_round_trip(self, tmp_path):
        g = spatial.Grid2D(7, 5, -1, 2, 0, 1)
        u = np.random.default_rng(0).standard_normal((2,) + g.shape) * 1e-3
        io.write_field(tmp_path / "f.csv", u, g)
        back, g2 = io.read_field(tmp_path / "f.csv")
        assert g2 == g
        np.testing.assert_array_equal(back, u)
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "x,y,u1,u2"

    def test_trace_round_trip(self, tmp_path):
        g = spatial.Grid2D.square(6)
        vals = np.random.default_rng(1).standard_normal((4, g.n_boundary, 2))
        tr = forward.BoundaryTimeSeries(vals, np.linspace(0, 1, 4))
        io.write_trace(tmp_path / "t.csv", tr, g)
        v, t = io.read_trace(tmp_path / "t.csv", g)
        np.testing.assert_array_equal(v, vals)
        np.testing.assert_array_equal(t, tr.times)

    def test_trace_wrong_grid(self, tmp_path):
        g = spatial.Grid2D.square(6)
        tr = forward.BoundaryTimeSeries(np.zeros((2, g.n_boundary, 2)), np.array([0.0, 1.0]))
        io.write_trace(tmp_path / "t.csv", tr, g)
        with pytest.raises(Exception):
            io.read_trace(tmp_path / "t.csv", spatial.Grid2D.square(7))

    def test_canonical_json(self):
        assert io.dumps_json({"b": 1, "a": [0.1]}) == '{\n  "a": [\n    0.1\n  ],\n  "b": 1\n}\n'


class TestCli:
    def test_simulate_artifacts(self, tmp_path):
        out = tmp_path / "sim"
        assert run_cli("simulate", *SMALL, "--out", out) == 0
        g = spatial.Grid2D.square(15)
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == "step,time,boundary_node_id,x,y,nu_x,nu_y,f1,f2"
        assert len(lines) == 1 + 61 * g.n_boundary
        meta = json.loads((out / "meta.json").read_text())
        assert meta["dt"] == pytest.approx(1 / 60)
        assert meta["config"]["lambda"] == 2.0
        u, _ = io.read_field(out / "u_true_t0.csv")
        np.testing.assert_array_equal(u, forward.make_test_field(1, g))

    def test_invert_matches_full(self, tmp_path):
        assert run_cli("full", *SMALL, "--out", tmp_path / "a") == 0
        assert run_cli("invert", "--config", tmp_path / "a" / "meta.json", "--data", tmp_path / "a",
                       "--out", tmp_path / "b", "--save-modes") == 0
        # the trace passes through 17-digit text, which is exact
        assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()
        assert len(list((tmp_path / "b" / "modes").glob("u_*.csv"))) == 6

    def test_convergence_rows(self, tmp_path):
        run_cli("full", *SMALL, "--out", tmp_path)
        rows = (tmp_path / "convergence.csv").read_text().splitlines()
        k = json.loads((tmp_path / "metrics.json").read_text())["picard"]["iterations"]
        assert rows[0] == "k,increment,log_increment" and len(rows) == k + 1

    def test_meta_closure(self, tmp_path):
        run_cli("full", *SMALL, "--seed", 3, "--out", tmp_path / "a")
        run_cli("full", "--config", tmp_path / "a" / "meta.json", "--out", tmp_path / "b")
        for name in ("metrics.json", "trace.csv", "u0_comp.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_test2_true_field(self, tmp_path):
        run_cli("simulate", *SMALL, "--test", 2, "--out", tmp_path)
        u, g = io.read_field(tmp_path / "u_true_t0.csv")
        masks = forward.reference_masks(2, g)
        assert u[0][masks[0]].max() == 1.0 and u[1][masks[1]].max() == 1.0
        assert np.all(u[:, ~masks.any(axis=0)] == 0)

    def test_invalid_test_id(self, tmp_path, capsys):
        out = tmp_path / "never"
        assert run_cli("full", "--test", 9, "--out", out) == cli.EXIT_INVALID
        assert not out.exists()
        assert "[pipeline_cli]" in capsys.readouterr().err

    def test_solver_failure_exit_code(self, tmp_path, monkeypatch):
        def boom(*a, **k):
            raise SolverError("no convergence", "inverse_solver", residual=1.0)
        monkeypatch.setattr(pipeline.inverse, "solve_least_squares", boom)
        assert run_cli("full", *SMALL, "--out", tmp_path) == cli.EXIT_SOLVER

    def test_basis_tables(self, tmp_path):
        assert run_cli("basis-tables", "--modes", 3, "--out", tmp_path) == 0
        c = time_basis.CouplingCoefficients.from_basis(time_basis.build_basis_table(3, 1.0))
        S = np.loadtxt(tmp_path / "S.csv", delimiter=",", skiprows=1)
        A = np.loadtxt(tmp_path / "A.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(S[:, 2].reshape(4, 4), c.S)
        np.testing.assert_array_equal(A[:, 3].reshape(4, 4, 4), c.A)
        assert (tmp_path / "A.csv").read_text().startswith("m,n,l,value\n")

    def test_dump_system(self, tmp_path):
        assert run_cli("full", *SMALL, "--no-convection", "--dump-system", "--out", tmp_path) == 0
        M = scipy.io.mmread(str(tmp_path / "system_matrix.mtx")).tocsr()
        cfg = pipeline.RunConfig.load(tmp_path / "meta.json")
        c = time_basis.CouplingCoefficients.from_basis(time_basis.build_basis_table(cfg.N, cfg.T))
        ref = reduced.SystemAssembler(cfg.make_grid(), cfg.viscosity, c, cfg.eps).matrix
        assert abs(M - ref).max() == 0

    def test_initial_and_pressure_fields(self, tmp_path):
        g = spatial.Grid2D.square(15)
        X, Y = g.mesh()
        u0 = np.stack([np.sin(np.pi * X) * np.sin(np.pi * Y), np.zeros_like(X)])
        io.write_field(tmp_path / "u0.csv", u0, g)
        io.write_field(tmp_path / "gp.csv", 0.1 * np.ones_like(u0), g)
        cfg = {"grid": 15, "n_steps": 60, "N": 5, "eps": 1e-3, "K": 3,
               "initial_field": str(tmp_path / "u0.csv"), "pressure_field": str(tmp_path / "gp.csv")}
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        assert run_cli("full", "--config", tmp_path / "cfg.json", "--out", tmp_path / "run") == 0
        m = json.loads((tmp_path / "run" / "metrics.json").read_text())["metrics"]
        assert np.isfinite(m["rel_l2"])

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run_cli("basis-tables", "--modes", 1, "--out", blocker / "sub") == cli.EXIT_IO


def test_noise_uses_pipeline_generator():
    cfg = pipeline.RunConfig().with_overrides(grid=9, n_steps=10, N=2, seed=11)
    sim = pipeline.simulate(cfg)
    r = np.random.default_rng(11).uniform(-1, 1, sim.clean.values.shape)
    np.testing.assert_array_equal(sim.trace.values, sim.clean.values * (1 + 0.1 * r))


def test_default_config_test1(full_scale):
    """Reference Test 1 at the default configuration: both maxima within 25%."""
    m = full_scale.get(1).metrics
    assert m["rel_err_max_1"] < 0.25 and m["rel_err_max_2"] < 0.25, m
