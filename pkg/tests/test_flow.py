"""Fine-scale Darcy flow: exactness, conservation, and a dense oracle."""

import numpy as np
import pytest

from conftest import random_mobility, rng
from dynmc.exceptions import ConfigError, SolverError
from dynmc.fine import FlowBC, cfl, divergence, solve_flow
from dynmc.grids import FineGrid


def dense_tpfa_dirichlet_x(grid, lam, p_left, p_right):
    """Independent scalar-loop assembly of the same TPFA system."""
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    n = nx * ny
    A = np.zeros((n, n))
    b = np.zeros(n)

    def k(i, j):
        return i * ny + j

    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                lf = 2 * lam[i, j] * lam[i + 1, j] / (lam[i, j] + lam[i + 1, j])
                t = lf * hy / hx
                A[k(i, j), k(i, j)] += t
                A[k(i, j), k(i + 1, j)] -= t
                A[k(i + 1, j), k(i + 1, j)] += t
                A[k(i + 1, j), k(i, j)] -= t
            if j + 1 < ny:
                lf = 2 * lam[i, j] * lam[i, j + 1] / (lam[i, j] + lam[i, j + 1])
                t = lf * hx / hy
                A[k(i, j), k(i, j)] += t
                A[k(i, j), k(i, j + 1)] -= t
                A[k(i, j + 1), k(i, j + 1)] += t
                A[k(i, j + 1), k(i, j)] -= t
    for j in range(ny):
        tb = 2 * lam[0, j] * hy / hx
        A[k(0, j), k(0, j)] += tb
        b[k(0, j)] += tb * p_left
        tb = 2 * lam[-1, j] * hy / hx
        A[k(nx - 1, j), k(nx - 1, j)] += tb
        b[k(nx - 1, j)] += tb * p_right
    return np.linalg.solve(A, b).reshape(nx, ny)


class TestHydrostatic:
    @pytest.mark.parametrize("seed,contrast", [(0, 1.0), (1, 10.0), (2, 1000.0)])
    def test_constant_c_noflow_gives_zero_velocity(self, seed, contrast):
        grid = FineGrid(12, 10, 3.0, 1.0)
        lam = random_mobility(12, 10, seed, contrast)
        c = np.full((12, 10), 0.7)
        p, vx, vy = solve_flow(grid, lam, c, FlowBC(), gravity_on=True)
        assert max(np.abs(vx).max(), np.abs(vy).max()) <= 1e-10 * 0.7 * grid.L1

    def test_pressure_matches_c_times_x(self):
        grid = FineGrid(10, 4, 2.0, 1.0)
        lam = np.ones((10, 4))
        c = np.full((10, 4), 0.7)
        p, _vx, _vy = solve_flow(grid, lam, c, FlowBC(), gravity_on=True)
        expect = 0.7 * grid.xc()[:, None]
        assert np.allclose(p - p[0, 0], expect - expect[0, 0], atol=1e-10)


class TestDenseOracle:
    def test_checkerboard_dirichlet_matches_dense_solve(self):
        grid = FineGrid(4, 4, 1.0, 1.0)
        lam = np.where((np.indices((4, 4)).sum(axis=0) % 2) == 0, 5.0, 0.2)
        bc = FlowBC(left=("pressure", 1.0), right=("pressure", 0.0))
        p, _vx, _vy = solve_flow(grid, lam, np.zeros((4, 4)), bc,
                                 gravity_on=False)
        expect = dense_tpfa_dirichlet_x(grid, lam, 1.0, 0.0)
        assert np.allclose(p, expect, atol=1e-12)


class TestConservation:
    def test_divergence_matches_source(self):
        grid = FineGrid(9, 7, 2.0, 1.5)
        lam = random_mobility(9, 7, 3, 10.0)
        f = rng(4).standard_normal((9, 7))
        f -= f.mean()  # compatible with no-flow
        p, vx, vy = solve_flow(grid, lam, np.zeros((9, 7)), FlowBC(),
                               gravity_on=False, f=f)
        assert np.abs(divergence(grid, vx, vy) - f * grid.cell_area).max() < 1e-9

    def test_inflow_equals_outflow_contrast(self):
        grid = FineGrid(16, 8, 4.0, 2.0)
        lam = np.where(rng(5).random((16, 8)) < 0.4, 1000.0, 1.0)
        bc = FlowBC(left=("flux", -1.0), right=("pressure", 0.0))
        _p, vx, vy = solve_flow(grid, lam, np.zeros((16, 8)), bc,
                                gravity_on=False)
        inflow = vx[0, :].sum() * grid.hy
        outflow = vx[-1, :].sum() * grid.hy
        assert inflow == pytest.approx(grid.L2, rel=1e-12)
        assert outflow == pytest.approx(inflow, rel=1e-9)
        assert np.abs(vy[:, 0]).max() == 0.0 and np.abs(vy[:, -1]).max() == 0.0

    def test_noflow_boundary_faces_carry_zero(self):
        grid = FineGrid(8, 6, 1.0, 1.0)
        c = rng(6).random((8, 6))
        _p, vx, vy = solve_flow(grid, np.ones((8, 6)), c, FlowBC(),
                                gravity_on=True)
        assert np.abs(vx[0, :]).max() == 0.0
        assert np.abs(vx[-1, :]).max() == 0.0
        assert np.abs(vy[:, 0]).max() == 0.0
        assert np.abs(vy[:, -1]).max() == 0.0


class TestErrors:
    def test_nonpositive_mobility_rejected(self):
        grid = FineGrid(4, 4, 1.0, 1.0)
        lam = np.ones((4, 4))
        lam[1, 1] = 0.0
        with pytest.raises(ConfigError, match="positive"):
            solve_flow(grid, lam, np.zeros((4, 4)), FlowBC(), gravity_on=False)

    def test_incompatible_pure_neumann_rejected(self):
        grid = FineGrid(4, 4, 1.0, 1.0)
        f = np.ones((4, 4))  # net source with no outlet
        with pytest.raises(SolverError, match="incompatible"):
            solve_flow(grid, np.ones((4, 4)), np.zeros((4, 4)), FlowBC(),
                       gravity_on=False, f=f)

    def test_bad_boundary_value_shape_rejected(self):
        grid = FineGrid(4, 4, 1.0, 1.0)
        bc = FlowBC(left=("flux", np.ones(3)), right=("pressure", 0.0))
        with pytest.raises(ConfigError):
            solve_flow(grid, np.ones((4, 4)), np.zeros((4, 4)), bc,
                       gravity_on=False)


class TestCfl:
    def test_zero_velocity(self):
        grid = FineGrid(4, 4, 1.0, 1.0)
        vx, vy = grid.zero_faces()
        assert cfl(grid, vx, vy, 0.1) == 0.0

    def test_direct_formula(self):
        # |v|max = 2, h = sqrt(hx^2 + hy^2) = 0.05, tau = 0.01 -> 0.4
        side = 20 * 0.05 / np.sqrt(2)  # hx = hy so the cell diagonal is 0.05
        grid = FineGrid(20, 20, side, side)
        vx, vy = grid.zero_faces()
        vx[:, :] = 2.0
        assert cfl(grid, vx, vy, 0.01) == pytest.approx(0.4)
