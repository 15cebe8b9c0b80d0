import math

import numpy as np
import pytest
import scipy.sparse as sp

from nsrecon import reduced as rd
from nsrecon import spatial as sd
from nsrecon import time_basis as tb
from nsrecon.errors import ConfigurationError, ShapeError
from nsrecon.inverse import solve_least_squares

MU = sd.ViscosityTensor.reference()


def couplings(N, T=1.0):
    return tb.CouplingCoefficients.from_basis(tb.build_basis_table(N, T))


def bubble(g, a=1.0, b=1.0):
    """Field vanishing on the boundary of (-1, 1)^2 on which every stencil is exact."""
    X, Y = g.mesh()
    p = (1 - X ** 2) * (1 - Y ** 2)
    return np.stack([a * p, b * p * (X + 0.5)])


def manufactured(g, N, seed=0):
    """Mode stack plus the matching source and Neumann data."""
    rng = np.random.default_rng(seed)
    c = couplings(N)
    coef = rng.standard_normal((N + 1, 2))
    U = np.stack([bubble(g, *coef[m]) for m in range(N + 1)])
    LU = np.stack([sd.apply_diffusion(g, MU, u) for u in U])
    src = LU - np.tensordot(c.S, U, axes=([1], [0]))
    src[:, :, [0, -1], :] = 0
    src[:, :, :, [0, -1]] = 0
    f = np.stack([sd.neumann_trace(u, g) for u in U])
    return U, src, f, c


@pytest.fixture(scope="module")
def basis():
    return tb.build_basis_table(5, 1.0)


class TestProjectBoundaryData:
    def test_zero(self, basis):
        t = np.linspace(0, 1, 51)
        assert np.all(rd.project_boundary_data(np.zeros((51, 8, 2)), t, basis) == 0)

    def test_basis_element(self, basis):
        t = np.linspace(0, 1, 701)
        q3 = np.sqrt(7.0) * np.polynomial.Legendre.basis(3, domain=[0, 1])(t)
        gx = np.array([1.0, -2.0, 0.5])
        trace = (np.exp(t) * q3)[:, None, None] * np.stack([gx, 2 * gx], axis=1)[None]
        fm = rd.project_boundary_data(trace, t, basis)
        expect = np.zeros((6, 3, 2))
        expect[3] = np.stack([gx, 2 * gx], axis=1)
        np.testing.assert_allclose(fm, expect, atol=1e-8)

    def test_constant_in_time(self, basis):
        t = np.linspace(0, 1, 101)
        g = np.array([[1.0, 3.0], [-2.0, 0.25]])
        fm = rd.project_boundary_data(np.broadcast_to(g, (101, 2, 2)), t, basis)
        np.testing.assert_allclose(fm[0], g * (1 - math.exp(-1)), atol=1e-12)

    def test_short_trace(self, basis):
        with pytest.raises(ConfigurationError):
            rd.project_boundary_data(np.zeros((11, 4, 2)), np.linspace(0, 0.5, 11), basis)

    def test_bad_shape(self, basis):
        with pytest.raises(ShapeError):
            rd.project_boundary_data(np.zeros((11, 4, 3)), np.linspace(0, 1, 11), basis)


class TestInteriorBlocks:
    def test_single_mode_residual(self):
        g = sd.Grid2D.square(11)
        X, _ = g.mesh()
        u = np.stack([X ** 2, 0 * X])
        S = couplings(0).S
        assert S[0, 0] == pytest.approx(1.0, abs=1e-12)
        r = sd.apply_diffusion(g, MU, u) - S[0, 0] * u
        np.testing.assert_allclose(r[0, 1:-1, 1:-1], 2 - X[1:-1, 1:-1] ** 2, atol=1e-11)
        # the assembled block acts the same way on fields vanishing on the boundary
        K = rd.assemble_interior_blocks(MU, g, S)
        b = bubble(g)
        np.testing.assert_allclose(K @ g.to_interior(b), g.to_interior(sd.apply_diffusion(g, MU, b) - b),
                                   atol=1e-10)

    def test_zero_stack(self):
        g = sd.Grid2D.square(7)
        K = rd.assemble_interior_blocks(MU, g, couplings(3).S)
        assert np.all(K @ np.zeros(K.shape[1]) == 0)

    def test_mode_coupling_is_diagonal_in_space(self):
        g = sd.Grid2D.square(7)
        S = couplings(2).S
        K = rd.assemble_interior_blocks(MU, g, S).tocsr()
        n = 2 * g.n_interior
        L = sd.assemble_diffusion(g, MU)
        for m in range(3):
            for k in range(3):
                blk = K[m * n:(m + 1) * n, k * n:(k + 1) * n]
                expect = (L if m == k else 0 * L) - S[m, k] * sp.identity(n)
                assert abs(blk - expect).max() <= 1e-12
                if m != k:
                    off = blk - sp.diags(blk.diagonal())
                    assert off.count_nonzero() == 0

    def test_reuse_bit_identical(self):
        g = sd.Grid2D.square(9)
        S = couplings(2).S
        a = rd.assemble_interior_blocks(MU, g, S)
        b = rd.assemble_interior_blocks(MU, g, S)
        assert (a != b).nnz == 0
        asm = rd.SystemAssembler(g, MU, couplings(2), 1e-4)
        s1 = asm.system(np.zeros((3, 2) + g.shape))
        s2 = asm.system(np.ones((3, 2) + g.shape))
        assert s1.matrix is s2.matrix


class TestConvectionSource:
    def test_zero(self):
        g = sd.Grid2D.square(7)
        c = couplings(3)
        assert np.all(rd.convection_source(np.zeros((4, 2) + g.shape), c.A, g) == 0)

    def test_single_mode(self):
        g = sd.Grid2D.square(9)
        u = bubble(g, 1.0, -2.0)
        src = rd.convection_source(u[None], couplings(0).A, g)
        np.testing.assert_allclose(src[0], (math.e - 1) * sd.convection(u, u, g), atol=1e-12)

    def test_matches_double_loop(self):
        g = sd.Grid2D.square(9)
        c = couplings(3)
        rng = np.random.default_rng(1)
        U = np.stack([bubble(g, *rng.standard_normal(2)) for _ in range(4)])
        fast = rd.convection_source(U, c.A, g)
        slow = np.zeros_like(fast)
        for m in range(4):
            # sum over n first, then l; the other order gives the same finite sum
            for n in range(4):
                for l in range(4):
                    slow[m] += c.A[m, n, l] * sd.convection(U[l], U[n], g)
        np.testing.assert_allclose(fast, slow, atol=1e-11)
        swapped = np.zeros_like(fast)
        for m in range(4):
            for l in range(4):
                for n in range(4):
                    swapped[m] += c.A[m, n, l] * sd.convection(U[l], U[n], g)
        np.testing.assert_allclose(fast, swapped, atol=1e-11)

    def test_shape_check(self):
        g = sd.Grid2D.square(7)
        with pytest.raises(ShapeError):
            rd.convection_source(np.zeros((2, 2) + g.shape), couplings(3).A, g)


class TestLeastSquaresSystem:
    def test_eps_must_be_positive(self):
        g = sd.Grid2D.square(5)
        with pytest.raises(ConfigurationError):
            rd.SystemAssembler(g, MU, couplings(1), 0.0)

    def test_layout(self):
        g = sd.Grid2D(7, 6)
        sysm = rd.SystemAssembler(g, MU, couplings(2), 1e-3).system()
        n_unknown = 3 * 2 * g.n_interior
        assert sysm.matrix.shape[1] == n_unknown
        sizes = {k: s.stop - s.start for k, s in sysm.blocks.items()}
        assert sizes == {"interior": n_unknown, "boundary": 3 * 2 * g.n_boundary,
                         "regularizer": 6 * n_unknown}
        assert sysm.rhs.shape == (sysm.matrix.shape[0],)

    def test_zero_data_zero_minimiser(self):
        g = sd.Grid2D.square(7)
        c = couplings(2)
        sysm = rd.assemble_system(None, MU, g, None, c, np.zeros((3, g.n_boundary, 2)), eps=1e-6)
        assert np.all(solve_least_squares(sysm, method="dense") == 0)

    def test_manufactured_recovery(self):
        g = sd.Grid2D.square(11)
        U, src, f, c = manufactured(g, 2)
        sysm = rd.assemble_system(None, MU, g, None, c, f, pressure_modes=src, eps=1e-10,
                                  convection=False)
        x = rd.stack_to_vector(U, g)
        # the planted stack leaves only the regulariser residual
        parts = sysm.objective_parts(x)
        assert parts["interior"] <= 1e-20 and parts["boundary"] <= 1e-20
        U_hat = solve_least_squares(sysm, method="splu")
        assert np.linalg.norm(U_hat - U) <= 1e-6 * np.linalg.norm(U)

    def test_eps_monotonicity(self):
        g = sd.Grid2D.square(9)
        U, src, f, c = manufactured(g, 1, seed=4)
        f = f * (1 + 0.2 * np.random.default_rng(0).uniform(-1, 1, f.shape))
        misfit = []
        for eps in (1e-4, 2e-4, 4e-4, 8e-4):
            sysm = rd.assemble_system(None, MU, g, None, c, f, pressure_modes=src, eps=eps,
                                      convection=False)
            x = rd.stack_to_vector(solve_least_squares(sysm, method="dense"), g)
            parts = sysm.objective_parts(x)
            misfit.append(parts["interior"] + parts["boundary"])
        assert all(b >= a * (1 - 1e-10) for a, b in zip(misfit, misfit[1:]))
        assert misfit[-1] > misfit[0]

    def test_full_column_rank(self):
        g = sd.Grid2D.square(11)
        A = rd.SystemAssembler(g, MU, couplings(2), 1e-6).matrix.toarray()
        assert np.linalg.eigvalsh(A.T @ A)[0] > 0
        assert np.linalg.matrix_rank(A) == A.shape[1]

    def test_superposition(self):
        g = sd.Grid2D.square(9)
        c = couplings(2)
        rng = np.random.default_rng(3)
        asm = rd.SystemAssembler(g, MU, c, 1e-5)
        f1, f2 = rng.standard_normal((2, 3, g.n_boundary, 2))
        U_prev = np.stack([bubble(g, *rng.standard_normal(2)) for _ in range(3)])

        def solve(f, U):
            return solve_least_squares(asm.system(U, f, convection=U is not None), method="dense")

        both = solve(f1 + f2, U_prev)
        np.testing.assert_allclose(both, solve(f1, None) + solve(f2, None) + solve(None, U_prev),
                                   atol=1e-9 * np.max(np.abs(both)))

    def test_boundary_rows_weighted(self):
        g = sd.Grid2D.square(5)
        c = couplings(0)
        f = np.zeros((1, g.n_boundary, 2))
        f[0, 2, 1] = 1.0
        sysm = rd.SystemAssembler(g, MU, c, 1e-3).system(None, f)
        b = sysm.rhs[sysm.blocks["boundary"]]
        # component 2 rows follow all component 1 rows
        assert b[g.n_boundary + 2] == pytest.approx(math.sqrt(g.hx))
        assert np.count_nonzero(b) == 1
