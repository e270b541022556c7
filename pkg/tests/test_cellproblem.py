import numpy as np
import pytest

from darcylab.cellproblem import (brinkman_density, compute_resistance,
                                  drag_matrix, drag_matrix_at,
                                  farfield_profile, particle_face_mask,
                                  rotate_solution, sample_velocity,
                                  solve_all_directions, solve_cell_problem,
                                  surface_stress_drag)
from darcylab.errors import (ExtrapolationError, ParameterError,
                             ResolutionError)
from darcylab.geometry import ReferenceShape
from darcylab.harness import fit_rate
from darcylab.stokes import SolverTolerances

TOL = SolverTolerances(momentum_tol=1e-4, divergence_tol=1e-6, max_outer=400)


@pytest.fixture(scope="module")
def sphere_solutions():
    shape = ReferenceShape.sphere(1.0)
    return solve_all_directions(shape, 6.0, 48, TOL)


_L8_CACHE = []


def sphere_solutions_L8():
    if not _L8_CACHE:
        _L8_CACHE.append(
            solve_cell_problem(ReferenceShape.sphere(1.0), 0, 8.0, 64, TOL))
    return _L8_CACHE[0]


class TestCellSolve:
    def test_noslip_on_particle(self, sphere_solutions):
        sol = sphere_solutions[0]
        pf = particle_face_mask(sol.mask)
        for fam in range(3):
            assert np.all(sol.w[fam][pf[fam]] == 0.0)

    def test_outer_boundary_carries_unit_vector(self, sphere_solutions):
        sol = sphere_solutions[0]
        assert np.all(sol.w.x[0, :, :] == 1.0)
        assert np.all(sol.w.x[-1, :, :] == 1.0)
        assert np.all(sol.w.y[:, 0, :] == 0.0)

    def test_underresolved_particle_raises(self):
        with pytest.raises(ResolutionError):
            solve_cell_problem(ReferenceShape.sphere(1.0), 0, 8.0, 32, TOL)

    def test_small_truncation_rejected(self):
        with pytest.raises(ParameterError):
            solve_cell_problem(ReferenceShape.sphere(1.0), 0, 2.0, 16, TOL)

    def test_farfield_decay_rate(self, sphere_solutions):
        """Shell profile decays like 1/r once the box truncation is
        extrapolated away (the raw profile is wall suppressed)."""
        s4 = solve_cell_problem(ReferenceShape.sphere(1.0), 0, 4.0, 32, TOL)
        s8 = sphere_solutions_L8()
        r4, v4 = farfield_profile(s4, nshells=16)
        r8, v8 = farfield_profile(s8, nshells=16)
        sel = (r4 >= 1.8) & (r4 <= 3.6)
        v8i = np.interp(r4[sel], r8, v8)
        vinf = 2.0 * v8i - v4[sel]
        fit = fit_rate(list(zip(r4[sel], vinf)))
        assert fit.exponent == pytest.approx(-1.0, abs=0.15)

    def test_rotation_matches_direct_solve(self, sphere_solutions):
        direct = solve_cell_problem(ReferenceShape.sphere(1.0), 1, 6.0, 48,
                                    TOL)
        rot = rotate_solution(sphere_solutions[0], 1)
        for fam in range(3):
            assert np.allclose(direct.w[fam], rot.w[fam], atol=1e-6)


class TestDrag:
    def test_isotropy_and_symmetry(self, sphere_solutions):
        rb = drag_matrix_at(sphere_solutions)
        off = rb - np.diag(np.diag(rb))
        assert np.abs(off).max() < 0.01 * np.abs(np.diag(rb)).max()
        assert np.abs(rb - rb.T).max() < 1e-6 * np.abs(rb).max()
        assert rb[0, 0] == pytest.approx(rb[1, 1], rel=1e-8)

    def test_surface_estimator_agrees(self, sphere_solutions):
        rb = drag_matrix_at(sphere_solutions)
        surf = surface_stress_drag(sphere_solutions[0])
        assert surf[0] == pytest.approx(rb[0, 0], rel=0.10)

    def test_size_scaling_linear(self):
        """Dilating the shape scales the drag linearly in size."""
        big = solve_all_directions(ReferenceShape.sphere(1.0), 6.0, 60, TOL)
        small = solve_all_directions(ReferenceShape.sphere(0.5), 3.0, 48, TOL)
        ratio = drag_matrix_at(big)[0, 0] / drag_matrix_at(small)[0, 0]
        assert ratio == pytest.approx(2.0, rel=0.05)

    def test_extrapolation_needs_two_points(self, sphere_solutions):
        rb = drag_matrix_at(sphere_solutions)
        with pytest.raises(ExtrapolationError):
            drag_matrix([(6.0, rb)])

    def test_resistance_matrix_invariants(self):
        shape = ReferenceShape.sphere(1.0)
        R, details = compute_resistance(shape, [4.0, 6.0], [32, 48], TOL)
        assert R.symmetry_defect < 1e-6
        assert R.min_eigenvalue > 0
        assert np.allclose(R.Rbar, 8.0 * R.R)
        assert len(details) == 2


class TestBrinkmanDensity:
    def test_alpha_three_identity(self):
        shape = ReferenceShape.sphere(1.0)
        R, _ = compute_resistance(shape, [4.0, 6.0], [32, 48], TOL)
        coef = brinkman_density(R, 0.3, 3.0)
        assert np.allclose(coef, R.R)

    def test_quarter_eps_alpha_two(self):
        shape = ReferenceShape.sphere(1.0)
        R, _ = compute_resistance(shape, [4.0, 6.0], [32, 48], TOL)
        coef = brinkman_density(R, 0.25, 2.0)
        assert np.allclose(coef, 4.0 * R.R)

    def test_monotone_in_eps(self):
        shape = ReferenceShape.sphere(1.0)
        R, _ = compute_resistance(shape, [4.0, 6.0], [32, 48], TOL)
        vals = [brinkman_density(R, e, 2.0)[0, 0] for e in (0.5, 0.25, 0.125)]
        assert vals[0] < vals[1] < vals[2]


def test_sample_velocity_matches_grid(sphere_solutions=None):
    shape = ReferenceShape.sphere(1.0)
    sol = solve_cell_problem(shape, 0, 4.0, 32, TOL)
    # at a face center the trilinear sample reproduces the stored value
    grid = sol.grid
    i, j, k = 20, 10, 12
    pt = np.array([grid.face_coords(0)[i],
                   grid.cell_centers(1)[j],
                   grid.cell_centers(2)[k]])
    v = sample_velocity(sol, pt[None, :])[0]
    assert v[0] == pytest.approx(sol.w.x[i, j, k], abs=1e-12)
