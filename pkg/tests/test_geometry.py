import numpy as np
import pytest

from darcylab.errors import ParameterError
from darcylab.geometry import (DomainSpec, ReferenceShape, RegionTag,
                               build_lattice, classify, classify_points,
                               sigma, signed_distance)


class TestSigma:
    def test_direct_evaluation(self):
        assert sigma(0.25, 2.0) == pytest.approx(0.5)

    def test_alpha_three_is_unity(self):
        for eps in (0.5, 0.125, 0.01):
            assert sigma(eps, 3.0) == pytest.approx(1.0)

    def test_alpha_one_is_eps(self):
        assert sigma(0.01, 1.0) == pytest.approx(0.01)

    @pytest.mark.parametrize("eps,alpha", [(0.0, 2.0), (1.5, 2.0),
                                           (0.25, 0.5), (0.25, 3.5)])
    def test_out_of_range(self, eps, alpha):
        with pytest.raises(ParameterError):
            sigma(eps, alpha)


class TestShapes:
    def test_sphere_level(self):
        s = ReferenceShape.sphere(0.5)
        assert s.level(0.0, 0.0, 0.0) < 0
        assert s.level(0.5, 0.0, 0.0) == pytest.approx(0.0)
        assert s.level(1.0, 0.0, 0.0) > 0

    def test_sphere_radius_validation(self):
        with pytest.raises(ParameterError):
            ReferenceShape.sphere(1.2)
        with pytest.raises(ParameterError):
            ReferenceShape.sphere(0.0)

    def test_superellipsoid_contains_origin(self):
        s = ReferenceShape.superellipsoid((0.4, 0.3, 0.2), 4.0)
        assert s.level(0.0, 0.0, 0.0) < 0
        assert s.level(0.9, 0.9, 0.9) > 0

    def test_superellipsoid_must_fit(self):
        with pytest.raises(ParameterError):
            ReferenceShape.superellipsoid((0.9, 0.9, 0.9), 4.0)

    def test_sdf_grid_roundtrip(self, tmp_path):
        n, h = 17, 0.05
        coords = (np.arange(n) - (n - 1) / 2) * h
        X, Y, Z = np.meshgrid(coords, coords, coords, indexing="ij")
        vals = np.sqrt(X**2 + Y**2 + Z**2) - 0.3
        path = tmp_path / "ball.sdf"
        with open(path, "w") as fh:
            fh.write(f"sdf {n} {n} {n} {h}\n")
            for v in vals.transpose(2, 1, 0).ravel():  # x fastest
                fh.write(f"{float(v)!r}\n")
        s = ReferenceShape.load_sdf(path)
        assert s.level(0.0, 0.0, 0.0) == pytest.approx(-0.3, abs=1e-12)
        assert s.level(0.31, 0.0, 0.0) > 0
        assert s.level(0.2, 0.0, 0.0) == pytest.approx(-0.1, abs=1e-3)


class TestLattice:
    def test_unit_cube_quarter_eps_all_cells_touch_boundary(self, unit_box):
        lat = build_lattice(unit_box, 0.25, 2.0, ReferenceShape.sphere(0.5))
        # the 2eps mesh tiles the cube in 8 cells, every one touches the wall
        assert lat.count == 0

    def test_too_large_eps_gives_empty_lattice(self, unit_box):
        lat = build_lattice(unit_box, 0.6, 2.0, ReferenceShape.sphere(0.5))
        assert lat.count == 0

    def test_enumeration_matches_brute_force(self):
        box = DomainSpec.cube(1.5)
        eps = 0.125
        lat = build_lattice(box, eps, 1.5, ReferenceShape.sphere(0.5))
        # brute force: cells [2 eps i, 2 eps (i+1)] strictly inside (0, 1.5)
        w = 2 * eps
        count = 0
        centers = []
        for i in range(20):
            for j in range(20):
                for k in range(20):
                    lo = np.array([i, j, k]) * w
                    hi = lo + w
                    if np.all(lo > 0) and np.all(hi < 1.5):
                        count += 1
                        centers.append(lo + eps)
        assert lat.count == count
        assert np.allclose(np.sort(lat.centers, axis=0),
                           np.sort(np.array(centers), axis=0))

    def test_deterministic_and_pure(self):
        box = DomainSpec.cube(1.3)
        a = build_lattice(box, 0.2, 1.5, ReferenceShape.sphere(0.5))
        b = build_lattice(box, 0.2, 1.5, ReferenceShape.sphere(0.5))
        assert np.array_equal(a.centers, b.centers)

    def test_centers_symmetric_for_symmetric_box(self):
        box = DomainSpec.cube(1.5)
        lat = build_lattice(box, 0.25, 1.5, ReferenceShape.sphere(0.5))
        c = lat.centers - 0.75
        flipped = np.sort((-c).view(np.ndarray), axis=0)
        assert np.allclose(flipped, np.sort(c, axis=0))


class TestMembership:
    def test_center_value_is_scaled_radius(self):
        box = DomainSpec.cube(1.5)
        eps, alpha, r = 0.25, 1.5, 0.6
        lat = build_lattice(box, eps, alpha, ReferenceShape.sphere(r))
        val = signed_distance(lat, lat.centers[0])
        assert val == pytest.approx(-(eps ** alpha) * r, rel=1e-12)

    def test_cell_corner_is_outside(self):
        box = DomainSpec.cube(1.5)
        lat = build_lattice(box, 0.25, 1.5, ReferenceShape.sphere(0.6))
        corner = lat.centers[0] + 0.25
        assert signed_distance(lat, corner) > 0

    def test_sign_agrees_with_brute_force(self, rng):
        box = DomainSpec.cube(1.5)
        eps, alpha, r = 0.25, 1.5, 0.7
        shape = ReferenceShape.sphere(r)
        lat = build_lattice(box, eps, alpha, shape)
        pts = rng.uniform(0.01, 1.49, size=(2000, 3))
        scale = eps ** alpha
        brute = np.full(len(pts), np.inf)
        for c in lat.centers:
            d = np.linalg.norm(pts - c, axis=1) - r * scale
            brute = np.minimum(brute, d)
        mine = np.array([signed_distance(lat, p) for p in pts])
        assert np.all((mine < 0) == (brute < 0))

    def test_classify_consistent_with_membership(self, rng):
        box = DomainSpec.cube(1.5)
        lat = build_lattice(box, 0.25, 1.5, ReferenceShape.sphere(0.7))
        pts = rng.uniform(0.01, 1.49, size=(5000, 3))
        tags = classify_points(lat, pts[:, 0], pts[:, 1], pts[:, 2])
        sd = np.array([signed_distance(lat, p) for p in pts])
        assert np.all((tags == int(RegionTag.SOLID)) == (sd < 0))


class TestClassify:
    def setup_method(self):
        self.box = DomainSpec.cube(1.5)
        self.eps = 0.25
        self.lat = build_lattice(self.box, self.eps, 2.0,
                                 ReferenceShape.sphere(0.5))
        self.center = self.lat.centers[0]

    def test_inner_ball(self):
        p = self.center + np.array([0.3 * self.eps, 0, 0])
        assert classify(self.lat, p).tag == RegionTag.INNER_BALL

    def test_annulus(self):
        p = self.center + np.array([0.75 * self.eps, 0, 0])
        assert classify(self.lat, p).tag == RegionTag.ANNULUS

    def test_corner(self):
        p = self.center + 0.9 * self.eps * np.array([1, 1, 1]) / 1.0
        assert classify(self.lat, p).tag == RegionTag.CORNER

    def test_boundary_cell(self):
        p = np.array([0.1, 0.1, 0.1])  # first cell touches the wall
        assert classify(self.lat, p).tag == RegionTag.BOUNDARY


def test_region_measure_monte_carlo(rng):
    """|union T_i| = N eps^(3 alpha) |T| within 1% by stratified sampling."""
    box = DomainSpec.cube(1.5)
    eps, alpha, r = 0.25, 1.5, 0.7
    lat = build_lattice(box, eps, alpha, ReferenceShape.sphere(r))
    scale = eps ** alpha
    analytic = lat.count * (scale ** 3) * (4.0 / 3.0) * np.pi * r ** 3
    # sample inside the carrying cells only to keep the variance low
    n_samples = 400_000
    idx = rng.integers(0, lat.count, size=n_samples)
    offsets = rng.uniform(-eps, eps, size=(n_samples, 3))
    pts = lat.centers[idx] + offsets
    inside = np.array(
        [signed_distance(lat, p) < 0 for p in pts[:20_000]])
    # vectorized membership for the full sample
    from darcylab.geometry import particle_level

    lv = particle_level(lat, pts[:, 0], pts[:, 1], pts[:, 2])
    frac = np.mean(lv < 0)
    mc = frac * lat.count * (2 * eps) ** 3
    assert mc == pytest.approx(analytic, rel=0.01)
    assert np.mean(inside) == pytest.approx(np.mean(lv[:20_000] < 0), abs=0)


def test_volume_fraction_vanishes_along_ladder():
    """Solid fraction of each covered cell decays like eps^(3(alpha-1))."""
    box = DomainSpec.cube(1.5)
    shape = ReferenceShape.sphere(0.7)
    fracs = []
    for eps in (0.25, 1 / 6, 0.125):
        lat = build_lattice(box, eps, 1.5, shape)
        per_cell = (eps ** 1.5 * 0.7) ** 3 * (4 / 3) * np.pi / (2 * eps) ** 3
        fracs.append(per_cell)
        assert lat.count > 0
    assert fracs[0] > fracs[1] > fracs[2]
    assert fracs[2] / fracs[0] == pytest.approx((0.125 / 0.25) ** 1.5, rel=1e-9)
