import numpy as np
import pytest

import darcylab.grid as G
from darcylab.errors import ParameterError
from darcylab.functional import (bogovskii, gamma_bregman_equiv,
                                 gamma_mean_equiv, poincare_constant)
from darcylab.geometry import DomainSpec, ReferenceShape, build_lattice
from darcylab.grid import GridSpec, Mask
from darcylab.stokes import SolverTolerances


def _tol(scale=1.0):
    return SolverTolerances(momentum_tol=1e-5 * scale,
                            divergence_tol=1e-9 * scale, max_outer=400)


class TestBogovskii:
    def test_constant_datum_gives_zero(self, perforated_case):
        lat, grid, mask = perforated_case
        f = np.full(grid.resolution, 4.2)
        res = bogovskii(f, lat, grid, _tol(), mask=mask)
        assert G.norm(res.v, 2, mask) == 0.0

    def test_random_datum_residual(self, perforated_case, rng):
        lat, grid, mask = perforated_case
        f = rng.standard_normal(grid.resolution) * mask.cell
        fn = G.norm(f - G.fluid_mean(f, mask) * mask.cell, 2, mask)
        res = bogovskii(f, lat, grid, _tol(fn), mask=mask)
        assert res.divergence_residual / fn <= 1e-8
        for fam in range(3):
            assert np.all(res.v[fam][~mask.faces[fam]] == 0.0)

    def test_linearity(self, perforated_case, rng):
        lat, grid, mask = perforated_case
        f = rng.standard_normal(grid.resolution) * mask.cell
        g = rng.standard_normal(grid.resolution) * mask.cell
        tol = _tol(0.1)
        va = bogovskii(f, lat, grid, tol, mask=mask).v
        vb = bogovskii(g, lat, grid, tol, mask=mask).v
        vab = bogovskii(f + g, lat, grid, tol, mask=mask).v
        diff = G.VectorField(*(vab[c] - va[c] - vb[c] for c in range(3)))
        scale = G.norm(vab, 2, mask)
        assert G.norm(diff, 2, mask) / scale < 1e-5


class TestPoincare:
    def test_unperforated_cube_constant(self, unit_box):
        grid = GridSpec.cover(unit_box, 32)
        mask = Mask.all_fluid(grid)
        est = poincare_constant(None, grid, mask=mask)
        assert est.constant == pytest.approx(1.0 / (np.pi * np.sqrt(3.0)),
                                             rel=0.02)
        assert est.lambda_min == pytest.approx(3 * np.pi ** 2, rel=0.04)

    def test_particles_decrease_constant(self, perforated_case):
        lat, grid, mask = perforated_case
        full = poincare_constant(None, grid, mask=Mask.all_fluid(grid))
        perf = poincare_constant(lat, grid, mask=mask)
        assert perf.constant < full.constant

    def test_rayleigh_consistency(self, perforated_case):
        lat, grid, mask = perforated_case
        est = poincare_constant(lat, grid, mask=mask)
        # any admissible field obeys the inequality with the estimate
        p = G.sample_on_cells(
            grid, lambda x, y, z: np.sin(np.pi * x / 1.5)
            * np.sin(np.pi * y / 1.5) * np.sin(np.pi * z / 1.5)) * mask.cell
        gp = G.grad(p, mask)
        # discrete |grad p| including the Dirichlet wall terms
        lap = G.laplacian(p, mask)
        grad_sq = -G.inner(lap, p, mask)
        assert G.norm(p, 2, mask) <= est.constant * (1 + 1e-6) \
            * np.sqrt(grad_sq)


class TestGammaMeanEquiv:
    def test_constant_samples(self):
        ratio, s1, s2 = gamma_mean_equiv(np.full(100, 2.5), 1.3)
        assert ratio == 1.0
        assert s1 == pytest.approx(0.0, abs=1e-20)
        assert s2 == pytest.approx(0.0, abs=1e-20)

    def test_worked_example(self):
        # f in {1, 4}, a = 1/2 (allowed, a > 1/2 required strictly above)
        f = np.array([1.0, 4.0])
        a = 0.51
        ratio, s1, s2 = gamma_mean_equiv(f, a)
        assert 0.5 < ratio < 2.0
        # the a=1/2 arithmetic from the calibration: ratio about 1.026
        fa = np.sqrt(f)
        s1_ref = np.sum((fa - np.sqrt(2.5)) ** 2)
        s2_ref = np.sum((fa - 1.5) ** 2)
        assert s1_ref == pytest.approx(0.51316, abs=1e-4)
        assert s2_ref == pytest.approx(0.5, abs=1e-12)
        assert s1_ref / s2_ref == pytest.approx(1.0263, abs=1e-3)

    def test_randomized_two_sided(self, rng):
        for a in (0.6, 1.0, 1.7, 3.0):
            f = rng.uniform(0.0, 5.0, size=100_000)
            ratio, s1, s2 = gamma_mean_equiv(f, a)
            assert 0.05 < ratio < 20.0

    def test_negative_samples_rejected(self):
        with pytest.raises(ParameterError):
            gamma_mean_equiv(np.array([-1.0, 2.0]), 1.0)

    def test_small_exponent_rejected(self):
        with pytest.raises(ParameterError):
            gamma_mean_equiv(np.array([1.0, 2.0]), 0.5)


class TestGammaBregman:
    def test_equal_arguments(self):
        lhs, rhs = gamma_bregman_equiv(1.7, 1.7, 2.4)
        assert lhs == pytest.approx(0.0, abs=1e-14)
        assert rhs == pytest.approx(0.0, abs=1e-14)

    def test_gamma_two_exact_half(self, rng):
        for _ in range(200):
            a, b = rng.uniform(0.0, 10.0, size=2)
            if a == b == 0.0:
                continue
            lhs, rhs = gamma_bregman_equiv(a, b, 2.0)
            assert lhs == pytest.approx(0.5 * rhs, rel=1e-12, abs=1e-13)

    def test_worked_example(self):
        lhs, rhs = gamma_bregman_equiv(4.0, 1.0, 2.0)
        assert lhs == pytest.approx(4.5)
        assert rhs == pytest.approx(9.0)

    def test_randomized_bounded_ratio(self, rng):
        for gamma in (1.2, 1.5, 2.5, 4.0):
            ratios = []
            for _ in range(2000):
                a, b = rng.uniform(1e-3, 10.0, size=2)
                lhs, rhs = gamma_bregman_equiv(a, b, gamma)
                if rhs > 1e-12:
                    ratios.append(lhs / rhs)
            ratios = np.array(ratios)
            assert ratios.min() > 0.0
            assert ratios.max() < 60.0

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            gamma_bregman_equiv(1.0, 1.0, 1.0)
        with pytest.raises(ParameterError):
            gamma_bregman_equiv(-1.0, 1.0, 2.0)
        with pytest.raises(ParameterError):
            gamma_bregman_equiv(0.0, 0.0, 2.0)
