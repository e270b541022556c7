import numpy as np
import pytest

import darcylab.grid as G
from darcylab.compressible import Forcing, ForcingSpec
from darcylab.darcy import solve_brinkman, solve_darcy
from darcylab.errors import ParameterError
from darcylab.geometry import DomainSpec, sigma
from darcylab.grid import GridSpec, Mask, VectorField

BOX = DomainSpec.cube(1.25)
R_ISO = 2.0 * np.eye(3)
TOL = None


def _tol(div=1e-11):
    from darcylab.stokes import SolverTolerances

    return SolverTolerances(momentum_tol=1e-9, divergence_tol=div,
                            max_outer=600)


def _grid(n=32):
    return GridSpec.cover(BOX, n)


class TestDarcySolve:
    def test_zero_forcing(self):
        sol = solve_darcy(_grid(), R_ISO, 1.0, ForcingSpec(), _tol())
        assert np.abs(sol.p).max() == 0.0
        for fam in range(3):
            assert np.abs(sol.u[fam]).max() == 0.0

    def test_constant_force_absorbed_by_pressure(self):
        fs = ForcingSpec(Forcing("zero"), Forcing("constant", (2.0, 0, 0)))
        grid = _grid()
        sol = solve_darcy(grid, R_ISO, 1.0, fs, _tol())
        x = grid.cell_centers(0)
        expected = 2.0 * (x - x.mean())
        assert np.abs(sol.p - expected[:, None, None]).max() < 1e-10
        assert G.norm(sol.u, 2, Mask.all_fluid(grid)) < 1e-10

    def test_vortex_passes_through(self):
        fs = ForcingSpec(Forcing("zero"), Forcing("vortex", (1.0, 0, 0)))
        grid = _grid()
        sol = solve_darcy(grid, R_ISO, 1.0, fs, _tol())
        g = fs.g.sample(grid)
        for fam in range(3):
            interior = [slice(1, -1) if d == fam else slice(None)
                        for d in range(3)]
            a = sol.u[fam][tuple(interior)]
            b = g[fam][tuple(interior)] / 2.0
            assert np.abs(a - b).max() < 1e-10
        assert np.abs(sol.p).max() < 1e-10
        assert sol.divergence_residual < 1e-10

    def test_gauge_invariance(self):
        """Adding a gradient with zero normal trace shifts p, not u."""
        grid = _grid()
        vort = Forcing("vortex", (1.0, 0, 0))
        base = solve_darcy(grid, R_ISO, 1.0,
                           ForcingSpec(Forcing("zero"), vort), _tol())
        grad = Forcing("gradient", (0.7, 0, 0))
        # g + grad(phi): solve with both forcings by sampling their sum;
        # the preset machinery only adds one g, so run the gradient alone
        # and use linearity
        gsol = solve_darcy(grid, R_ISO, 1.0,
                           ForcingSpec(Forcing("zero"), grad), _tol())
        phi = grad.potential(grid)
        phi = phi - phi.mean()
        assert G.norm(gsol.u, 2, Mask.all_fluid(grid)) < 1e-4 * np.abs(
            phi).max()
        assert np.abs(gsol.p - phi).max() < 5e-3 * np.abs(phi).max()
        # linearity: adding the gradient to the vortex leaves u unchanged
        both_p = base.p + gsol.p
        assert np.allclose(both_p - both_p.mean(),
                           base.p + gsol.p, atol=1e-12)

    def test_pointwise_law_interior(self):
        """R u = F - grad p at interior faces.

        For diagonal resistance the identity is exact by construction (the
        velocity is assembled from the same face fluxes); the anisotropic
        cross terms add an averaging error that shrinks under refinement.
        """
        fs = ForcingSpec(Forcing("zero"), Forcing("vortex", (1.0, 0, 0)))
        grid = GridSpec.cover(BOX, 24)
        R = np.diag([2.0, 3.0, 4.0])
        sol = solve_darcy(grid, R, 1.0, fs, _tol())
        g = fs.g.sample(grid)
        gp = G.grad(sol.p, Mask.all_fluid(grid))
        for fam in range(3):
            interior = [slice(4, -4)] * 3
            lhs = R[fam, fam] * sol.u[fam][tuple(interior)]
            rhs = (g[fam] - gp[fam])[tuple(interior)]
            assert np.abs(lhs - rhs).max() < 1e-12

        Rx = np.array([[2.0, 0.4, 0.0], [0.4, 3.0, 0.0], [0.0, 0.0, 4.0]])
        errs = []
        for n in (16, 32):
            grid = GridSpec.cover(BOX, n)
            sol = solve_darcy(grid, Rx, 1.0, fs, _tol(1e-12))
            g = fs.g.sample(grid)
            gp = G.grad(sol.p, Mask.all_fluid(grid))
            worst = 0.0
            for fam in range(3):
                interior = [slice(4, -4)] * 3
                lhs = sum(Rx[fam, c] * _avg_face(sol.u, c, fam, grid)
                          for c in range(3))[tuple(interior)]
                rhs = (g[fam] - gp[fam])[tuple(interior)]
                worst = max(worst, np.abs(lhs - rhs).max())
            errs.append(worst)
        assert errs[1] < errs[0]


    def test_linearity_in_forcing(self):
        grid = _grid(16)
        f1 = ForcingSpec(Forcing("zero"), Forcing("vortex", (1.0, 0, 0)))
        f2 = ForcingSpec(Forcing("zero"), Forcing("constant", (0.5, 0.2, 0)))
        s1 = solve_darcy(grid, R_ISO, 1.0, f1, _tol())
        s2 = solve_darcy(grid, R_ISO, 1.0, f2, _tol())
        # combined forcing: vortex with doubled amplitude equals 2x solution
        f3 = ForcingSpec(Forcing("zero"), Forcing("vortex", (2.0, 0, 0)))
        s3 = solve_darcy(grid, R_ISO, 1.0, f3, _tol())
        for fam in range(3):
            assert np.allclose(s3.u[fam], 2.0 * s1.u[fam], atol=1e-10)

    def test_non_spd_rejected(self):
        with pytest.raises(ParameterError):
            solve_darcy(_grid(16), -np.eye(3), 1.0, ForcingSpec(), _tol())
        with pytest.raises(ParameterError):
            bad = np.eye(3)
            bad[0, 1] = 0.5
            solve_darcy(_grid(16), bad, 1.0, ForcingSpec(), _tol())

    def test_anisotropic_resistance(self):
        """Full SPD matrix with off-diagonal coupling stays symmetric."""
        grid = _grid(16)
        R = np.array([[2.0, 0.3, 0.0], [0.3, 2.5, 0.1], [0.0, 0.1, 3.0]])
        fs = ForcingSpec(Forcing("zero"), Forcing("vortex", (1.0, 0, 0)))
        sol = solve_darcy(grid, R, 1.0, fs, _tol(1e-9))
        assert sol.divergence_residual < 1e-8


class TestBrinkman:
    def test_zero_forcing(self):
        sol = solve_brinkman(_grid(16), R_ISO, 0.25, 1.5, 1.0,
                             ForcingSpec(), _tol(1e-10))
        assert G.norm(sol.u, 2, Mask.all_fluid(_grid(16))) == 0.0

    def test_energy_identity(self):
        grid = _grid(24)
        fs = ForcingSpec(Forcing("zero"), Forcing("vortex", (1.0, 0, 0)))
        eps, alpha = 0.25, 1.5
        sol = solve_brinkman(grid, R_ISO, eps, alpha, 1.0, fs, _tol(1e-10))
        mask = Mask.all_fluid(grid)
        s2 = sigma(eps, alpha) ** 2
        g = fs.g.sample(grid)
        G.zero_extend(g, mask)
        energy = G.dirichlet_form(sol.u, sol.u, mask)
        friction = sum(
            (2.0 / s2) * G.inner(sol.u, sol.u, mask) / 3.0 for _ in range(3))
        friction = (2.0 / s2) * G.inner(sol.u, sol.u, mask)
        work = G.inner(g, sol.u, mask)
        assert energy + friction == pytest.approx(work, rel=1e-5)

    def test_rescaled_brinkman_approaches_darcy(self):
        """u/sigma^2 tends to the Darcy field away from the boundary."""
        grid = _grid(32)
        fs = ForcingSpec(Forcing("zero"), Forcing("vortex", (1.0, 0, 0)))
        dar = solve_darcy(grid, R_ISO, 1.0, fs, _tol())
        gaps = []
        for eps, alpha in ((0.25, 2.0), (0.09, 2.0)):
            s2 = sigma(eps, alpha) ** 2
            sol = solve_brinkman(grid, R_ISO, eps, alpha, 1.0, fs,
                                 _tol(1e-10 * s2))
            num = 0.0
            den = 0.0
            for fam in range(3):
                interior = [slice(8, -8)] * 3
                d = sol.u[fam][tuple(interior)] / s2 \
                    - dar.u[fam][tuple(interior)]
                num += float(np.sum(d ** 2))
                den += float(np.sum(dar.u[fam][tuple(interior)] ** 2))
            gaps.append(np.sqrt(num / den))
        assert gaps[1] < gaps[0]


def _avg_face(u, src, dst, grid):
    if src == dst:
        return u[src]
    from darcylab.darcy import _face_to_face

    return _face_to_face(u[src], src, dst, grid)
