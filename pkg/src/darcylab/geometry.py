"""Perforated-domain geometry.

The domain is an axis-aligned box covered by a regular mesh of closed cubes
with side 2*eps.  Every mesh cell whose closure lies strictly inside the box
carries one particle: the reference shape shrunk by eps**alpha and centered
at the cell center.  Cells that touch the box boundary stay particle-free.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

_STRICT_TOL = 1e-12


def sigma(eps: float, alpha: float) -> float:
    """Critical scale eps**((3 - alpha)/2) separating the flow regimes."""
    if not (0.0 < eps <= 1.0):
        raise ParameterError(f"eps must lie in (0, 1], got {eps}")
    if not (1.0 <= alpha <= 3.0):
        raise ParameterError(f"alpha must lie in [1, 3], got {alpha}")
    return float(eps ** ((3.0 - alpha) / 2.0))


class RegionTag(enum.IntEnum):
    """Four-part cell decomposition plus the particle-free boundary cells."""

    SOLID = 0        # inside the particle
    INNER_BALL = 1   # ball of radius eps/2 minus the particle
    ANNULUS = 2      # shell between radius eps/2 and eps
    CORNER = 3       # cell corners outside the inscribed ball
    BOUNDARY = 4     # cell touching the outer boundary, no particle


@dataclass(frozen=True)
class CellRegion:
    tag: RegionTag


@dataclass(frozen=True)
class ReferenceShape:
    """Solid reference particle contained strictly inside the unit ball.

    ``kind`` is one of "sphere", "superellipsoid", "sampled".  The level
    function is negative inside the solid, positive outside, continuous,
    and approximates signed distance near the surface.
    """

    kind: str
    bounding_radius: float
    radius: float = 0.0
    semi_axes: tuple[float, float, float] = (1.0, 1.0, 1.0)
    exponent: float = 2.0
    sdf_values: np.ndarray | None = field(default=None, repr=False)
    sdf_spacing: float = 0.0

    def __post_init__(self):
        # radius exactly 1 is admitted so the classical unit-sphere drag
        # oracle can be stated without a scale factor
        if not (0.0 < self.bounding_radius <= 1.0):
            raise ParameterError(
                f"bounding radius must lie in (0, 1], got {self.bounding_radius}"
            )

    @staticmethod
    def sphere(radius: float) -> "ReferenceShape":
        if not (0.0 < radius <= 1.0):
            raise ParameterError(f"sphere radius must lie in (0, 1], got {radius}")
        return ReferenceShape(kind="sphere", bounding_radius=radius, radius=radius)

    @staticmethod
    def superellipsoid(semi_axes, exponent: float) -> "ReferenceShape":
        ax = tuple(float(a) for a in semi_axes)
        if len(ax) != 3 or min(ax) <= 0.0:
            raise ParameterError(f"need 3 positive semi-axes, got {semi_axes}")
        if exponent < 2.0:
            raise ParameterError(f"superellipsoid exponent must be >= 2, got {exponent}")
        # crude but safe bound: the shape lies inside the axis-aligned box
        bound = float(np.sqrt(sum(a * a for a in ax)))
        if bound >= 1.0:
            raise ParameterError("superellipsoid does not fit strictly inside B_1")
        return ReferenceShape(
            kind="superellipsoid", bounding_radius=bound,
            semi_axes=ax, exponent=float(exponent),
        )

    @staticmethod
    def from_sdf_grid(values: np.ndarray, spacing: float) -> "ReferenceShape":
        values = np.asarray(values, dtype=float)
        if values.ndim != 3:
            raise ParameterError("sampled sdf must be a 3d grid")
        if spacing <= 0.0:
            raise ParameterError("sdf grid spacing must be positive")
        half = tuple((n - 1) * spacing / 2.0 for n in values.shape)
        bound = float(np.sqrt(sum(h * h for h in half)))
        if bound >= 1.0:
            # the grid must itself sit inside the unit ball for containment
            raise ParameterError("sampled sdf grid extends outside B_1")
        return ReferenceShape(
            kind="sampled", bounding_radius=bound,
            sdf_values=values, sdf_spacing=float(spacing),
        )

    @staticmethod
    def load_sdf(path) -> "ReferenceShape":
        """Read the raw grid format: ``sdf <nx> <ny> <nz> <h>`` then values.

        Values are newline separated decimals in x-fastest order, samples
        centered on the origin.
        """
        with open(path, "r", encoding="ascii") as fh:
            header = fh.readline().split()
            if len(header) != 5 or header[0] != "sdf":
                raise ParameterError(f"bad sdf header in {path}")
            nx, ny, nz = (int(t) for t in header[1:4])
            h = float(header[4])
            data = np.loadtxt(fh, dtype=float)
        if data.size != nx * ny * nz:
            raise ParameterError(
                f"sdf file {path}: expected {nx * ny * nz} values, got {data.size}"
            )
        values = data.reshape((nz, ny, nx)).transpose(2, 1, 0)  # x-fastest on disk
        return ReferenceShape.from_sdf_grid(values, h)

    def level(self, x, y, z):
        """Level function on broadcastable coordinate arrays (reference units)."""
        if self.kind == "sphere":
            r = np.sqrt(x * x + y * y + z * z)
            return r - self.radius
        if self.kind == "superellipsoid":
            a, b, c = self.semi_axes
            m = self.exponent
            s = (np.abs(x / a) ** m + np.abs(y / b) ** m + np.abs(z / c) ** m)
            return (s ** (1.0 / m) - 1.0) * min(self.semi_axes)
        return self._sample_sdf(x, y, z)

    def _sample_sdf(self, x, y, z):
        vals = self.sdf_values
        h = self.sdf_spacing
        nx, ny, nz = vals.shape
        x, y, z = np.broadcast_arrays(x, y, z)
        out = np.empty(x.shape, dtype=float)

        def frac(c, n):
            g = c / h + (n - 1) / 2.0
            i0 = np.clip(np.floor(g).astype(np.int64), 0, n - 2)
            return i0, np.clip(g - i0, 0.0, 1.0)

        i0, tx = frac(x, nx)
        j0, ty = frac(y, ny)
        k0, tz = frac(z, nz)
        v = 0.0
        for di, wx in ((0, 1.0 - tx), (1, tx)):
            for dj, wy in ((0, 1.0 - ty), (1, ty)):
                for dk, wz in ((0, 1.0 - tz), (1, tz)):
                    v = v + wx * wy * wz * vals[i0 + di, j0 + dj, k0 + dk]
        out[...] = v
        # outside the sampled box: fall back to distance from the bounding ball
        r = np.sqrt(x * x + y * y + z * z)
        outside = r > self.bounding_radius
        return np.where(outside, np.maximum(v, r - self.bounding_radius), v)


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned outer box."""

    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]

    def __post_init__(self):
        lo = np.asarray(self.box_min, dtype=float)
        hi = np.asarray(self.box_max, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ParameterError("box corners must be 3-vectors")
        if not np.all(hi > lo):
            raise ParameterError(f"degenerate box: {self.box_min} .. {self.box_max}")

    @staticmethod
    def cube(side: float, origin=(0.0, 0.0, 0.0)) -> "DomainSpec":
        o = tuple(float(v) for v in origin)
        return DomainSpec(o, tuple(v + float(side) for v in o))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.box_max) - np.asarray(self.box_min)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))


@dataclass(frozen=True)
class PerforationLattice:
    """The perforated box: mesh of 2*eps cells, one scaled particle per
    interior cell."""

    domain: DomainSpec
    eps: float
    alpha: float
    shape: ReferenceShape
    centers: np.ndarray            # (N, 3), lexicographic by cell index
    mesh_counts: tuple[int, int, int]   # covering-mesh cells per axis
    carries: np.ndarray            # bool over the covering mesh

    @property
    def particle_scale(self) -> float:
        return float(self.eps ** self.alpha)

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])

    @property
    def particle_radius(self) -> float:
        """Bounding radius of one particle in physical units."""
        return self.shape.bounding_radius * self.particle_scale

    def cell_index(self, x, y, z):
        """Covering-mesh index triple of the cell containing each point."""
        lo = self.domain.box_min
        w = 2.0 * self.eps
        out = []
        for c, o, n in zip((x, y, z), lo, self.mesh_counts):
            i = np.floor((np.asarray(c) - o) / w).astype(np.int64)
            out.append(np.clip(i, 0, n - 1))
        return out

    def cell_center_coords(self, ix, iy, iz):
        lo = self.domain.box_min
        w = 2.0 * self.eps
        return (lo[0] + (np.asarray(ix) + 0.5) * w,
                lo[1] + (np.asarray(iy) + 0.5) * w,
                lo[2] + (np.asarray(iz) + 0.5) * w)


def build_lattice(domain: DomainSpec, eps: float, alpha: float,
                  shape: ReferenceShape) -> PerforationLattice:
    """Enumerate the 2*eps mesh and keep particles in fully interior cells.

    Deterministic: centers are listed lexicographically by (ix, iy, iz).
    An eps too large for the box yields an empty lattice, not an error.
    """
    if eps <= 0.0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if not (1.0 <= alpha <= 3.0):
        raise ParameterError(f"alpha must lie in [1, 3], got {alpha}")
    w = 2.0 * eps
    lo = np.asarray(domain.box_min, dtype=float)
    hi = np.asarray(domain.box_max, dtype=float)
    counts = tuple(int(np.ceil((hi[d] - lo[d]) / w - _STRICT_TOL)) for d in range(3))

    axis_ok = []
    for d in range(3):
        idx = np.arange(counts[d])
        cell_lo = lo[d] + idx * w
        cell_hi = cell_lo + w
        axis_ok.append((cell_lo > lo[d] + _STRICT_TOL) & (cell_hi < hi[d] - _STRICT_TOL))
    carries = axis_ok[0][:, None, None] & axis_ok[1][None, :, None] & axis_ok[2][None, None, :]

    ii, jj, kk = np.nonzero(carries)
    centers = np.stack(
        [lo[0] + (ii + 0.5) * w, lo[1] + (jj + 0.5) * w, lo[2] + (kk + 0.5) * w],
        axis=1,
    )
    return PerforationLattice(
        domain=domain, eps=float(eps), alpha=float(alpha), shape=shape,
        centers=centers, mesh_counts=counts, carries=carries,
    )


def particle_level(lattice: PerforationLattice, x, y, z):
    """Physical-units level function of the nearest particle (broadcasts).

    Negative exactly on the union of particles.  For points whose own cell
    carries no particle the value is a positive stand-in (distance scale of
    the nearest carrying cell), which keeps the sign exact everywhere since
    particles never leave their cells.
    """
    eps = lattice.eps
    scale = lattice.particle_scale
    ix, iy, iz = lattice.cell_index(x, y, z)
    cx, cy, cz = lattice.cell_center_coords(ix, iy, iz)
    level = lattice.shape.level(
        (np.asarray(x) - cx) / scale,
        (np.asarray(y) - cy) / scale,
        (np.asarray(z) - cz) / scale,
    ) * scale
    if lattice.count == 0:
        return np.full(np.broadcast(x, y, z).shape, 2.0 * eps)
    carrying = lattice.carries[ix, iy, iz]
    return np.where(carrying, level, 2.0 * eps)


def signed_distance(lattice: PerforationLattice, point) -> float:
    """Signed distance style membership oracle for one point."""
    p = np.asarray(point, dtype=float)
    return float(particle_level(lattice, p[0], p[1], p[2]))


def classify_points(lattice: PerforationLattice, x, y, z) -> np.ndarray:
    """Vectorized region tags of the four-part cell decomposition."""
    eps = lattice.eps
    ix, iy, iz = lattice.cell_index(x, y, z)
    cx, cy, cz = lattice.cell_center_coords(ix, iy, iz)
    dx = np.asarray(x) - cx
    dy = np.asarray(y) - cy
    dz = np.asarray(z) - cz
    r = np.sqrt(dx * dx + dy * dy + dz * dz)
    level = particle_level(lattice, x, y, z)

    tags = np.full(r.shape, int(RegionTag.CORNER), dtype=np.int8)
    tags[r < eps] = int(RegionTag.ANNULUS)
    tags[r < 0.5 * eps] = int(RegionTag.INNER_BALL)
    tags[level < 0.0] = int(RegionTag.SOLID)
    if lattice.count == 0:
        tags[...] = int(RegionTag.BOUNDARY)
        return tags
    carrying = lattice.carries[ix, iy, iz]
    tags[~carrying] = int(RegionTag.BOUNDARY)
    return tags


def classify(lattice: PerforationLattice, point) -> CellRegion:
    p = np.asarray(point, dtype=float)
    tag = classify_points(lattice, p[0:1], p[1:2], p[2:3])[0]
    return CellRegion(RegionTag(int(tag)))
