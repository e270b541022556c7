import numpy as np
import pytest

from darcylab.errors import ParameterError
from darcylab.geometry import DomainSpec, ReferenceShape
from darcylab.harness import EpsLadder, fit_rate, run_scaling_sweeps


class TestFitRate:
    def test_exact_power_data(self):
        eps = [0.5, 0.25, 0.125, 0.0625]
        pts = [(e, 3.0 * e ** 0.75) for e in eps]
        fit = fit_rate(pts, target=0.75)
        assert fit.exponent == pytest.approx(0.75, abs=1e-12)
        assert fit.prefactor == pytest.approx(3.0, rel=1e-12)
        assert fit.residual == pytest.approx(0.0, abs=1e-12)
        assert fit.deviation == pytest.approx(0.0, abs=1e-12)

    def test_two_points_interpolate(self):
        fit = fit_rate([(0.5, 2.0), (0.25, 1.0)])
        assert fit.exponent == pytest.approx(1.0, abs=1e-12)
        assert fit.residual == pytest.approx(0.0, abs=1e-12)

    def test_noisy_recovery(self, rng):
        eps = np.geomspace(0.5, 0.03125, 5)
        vals = 2.0 * eps ** 1.3 * np.exp(rng.normal(0, 0.05, size=5))
        fit = fit_rate(list(zip(eps, vals)))
        assert fit.exponent == pytest.approx(1.3, abs=0.1)
        assert fit.residual < 0.2

    def test_too_few_points(self):
        with pytest.raises(ParameterError):
            fit_rate([(0.5, 1.0)])

    def test_nonpositive_values(self):
        with pytest.raises(ParameterError):
            fit_rate([(0.5, 1.0), (0.25, 0.0)])


class TestEpsLadder:
    def test_eps_must_decrease(self):
        with pytest.raises(ParameterError):
            EpsLadder(eps_values=(0.125, 0.25), alpha=1.5)

    def test_resolution_rule_floors(self):
        with pytest.raises(ParameterError):
            EpsLadder(eps_values=(0.25, 0.125), alpha=1.5, cells_per_eps=8)
        with pytest.raises(ParameterError):
            EpsLadder(eps_values=(0.25, 0.125), alpha=1.5,
                      min_cells_per_diameter=4)

    def test_resolution_values(self):
        ladder = EpsLadder(eps_values=(0.25, 1 / 6, 0.125), alpha=1.5,
                           box=DomainSpec.cube(1.5),
                           shape=ReferenceShape.sphere(0.9))
        assert [ladder.resolution(e) for e in ladder.eps_values] \
            == [96, 144, 192]

    def test_underresolved_particle_rejected(self):
        ladder = EpsLadder(eps_values=(0.25, 0.125), alpha=2.5,
                           box=DomainSpec.cube(1.5),
                           shape=ReferenceShape.sphere(0.3))
        with pytest.raises(ParameterError):
            ladder.resolution(0.125)

    def test_memory_budget(self):
        ladder = EpsLadder(eps_values=(0.25, 0.125), alpha=1.5,
                           box=DomainSpec.cube(1.5),
                           shape=ReferenceShape.sphere(0.9),
                           memory_cells_budget=100 ** 3)
        with pytest.raises(ParameterError):
            ladder.resolution(0.125)

    def test_beta_threshold_recorded(self):
        ladder = EpsLadder(eps_values=(0.25, 0.125), alpha=1.25, beta=1.3,
                           gamma=2.0, box=DomainSpec.cube(1.5),
                           shape=ReferenceShape.sphere(0.5))
        desc = ladder.describe()
        assert desc["beta_threshold"] == pytest.approx(1.125)
        assert desc["beta_above_threshold"]


class TestPartialSweeps:
    def test_failed_point_is_itemized_not_fatal(self):
        # the middle point blows the memory budget; the sweep still runs
        ladder = EpsLadder(eps_values=(0.5, 0.375, 0.125), alpha=1.5,
                           box=DomainSpec.cube(1.5),
                           shape=ReferenceShape.sphere(0.9),
                           memory_cells_budget=80 ** 3)
        # n = 48, 64 fit the budget; eps=0.125 needs 192^3 and fails
        report = run_scaling_sweeps(ladder, probes=0, power_steps=0)
        assert report.partial
        assert len(report.failures) == 1
        assert report.failures[0]["eps"] == 0.125
        assert {p["eps"] for p in report.points} == {0.5, 0.375}
