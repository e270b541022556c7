"""Staggered (MAC) fields and discrete operators on the masked box.

Scalars live at cell centers, vector components at the faces of their own
axis.  Component arrays include the boundary faces, which are always solid:
u.x has shape (nx+1, ny, nz) and so on.  Solid degrees of freedom are kept
identically zero; this is the discrete extension by zero.

Boundary conditions in the Laplacian: a solid neighbor along the component's
own axis is a Dirichlet value at that node (the face sits on the no-slip
set); a solid neighbor in a tangential direction yields a ghost reflection,
placing the zero halfway between the two face centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ParameterError, ShapeMismatchError
from .geometry import DomainSpec, PerforationLattice, particle_level

_FAMILIES = (0, 1, 2)


@dataclass(frozen=True)
class GridSpec:
    """Uniform isotropic grid spanning the box exactly."""

    resolution: tuple[int, int, int]
    h: float
    box: DomainSpec

    def __post_init__(self):
        ext = self.box.extent
        for d in range(3):
            n = self.resolution[d]
            if n < 8:
                raise ParameterError(f"resolution must be >= 8 per axis, got {n}")
            if abs(n * self.h - ext[d]) > 1e-9 * max(1.0, ext[d]):
                raise ParameterError(
                    f"h*resolution must span the box: axis {d}, "
                    f"{n}*{self.h} != {ext[d]}"
                )

    @staticmethod
    def cover(box: DomainSpec, n: int) -> "GridSpec":
        """Cube box covered by n cells per axis."""
        ext = box.extent
        if abs(ext[0] - ext[1]) > 1e-12 or abs(ext[0] - ext[2]) > 1e-12:
            raise ParameterError("GridSpec.cover expects a cubic box")
        return GridSpec(resolution=(n, n, n), h=float(ext[0] / n), box=box)

    def cell_centers(self, axis: int) -> np.ndarray:
        lo = self.box.box_min[axis]
        n = self.resolution[axis]
        return lo + (np.arange(n) + 0.5) * self.h

    def face_coords(self, axis: int) -> np.ndarray:
        lo = self.box.box_min[axis]
        n = self.resolution[axis]
        return lo + np.arange(n + 1) * self.h

    def face_shape(self, family: int) -> tuple[int, int, int]:
        nx, ny, nz = self.resolution
        shape = [nx, ny, nz]
        shape[family] += 1
        return tuple(shape)


@dataclass
class VectorField:
    """Face-centered components; arrays include the (solid) boundary faces."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __getitem__(self, family: int) -> np.ndarray:
        return (self.x, self.y, self.z)[family]

    def __setitem__(self, family: int, value: np.ndarray):
        setattr(self, ("x", "y", "z")[family], value)

    def components(self):
        return (self.x, self.y, self.z)

    def copy(self) -> "VectorField":
        return VectorField(self.x.copy(), self.y.copy(), self.z.copy())

    @staticmethod
    def zeros(grid: GridSpec) -> "VectorField":
        return VectorField(*(np.zeros(grid.face_shape(f)) for f in _FAMILIES))

    @staticmethod
    def constant(grid: GridSpec, vec) -> "VectorField":
        return VectorField(*(np.full(grid.face_shape(f), float(vec[f]))
                             for f in _FAMILIES))


def scalar_zeros(grid: GridSpec) -> np.ndarray:
    return np.zeros(grid.resolution)


@dataclass
class Mask:
    """Fluid flags for cells and the three face families.

    A face is fluid iff both adjacent cells are fluid and its center lies
    outside every particle; faces on the outer boundary are solid.
    """

    grid: GridSpec
    cell: np.ndarray
    faces: tuple[np.ndarray, np.ndarray, np.ndarray]

    def __post_init__(self):
        self._stencil_cache: dict = {}

    def _face_diag(self, fam: int) -> np.ndarray:
        """Stencil diagonal 6 + (number of tangential solid adjacencies)."""
        key = ("fdiag", fam)
        if key not in self._stencil_cache:
            fluid = self.faces[fam]
            diag = np.full(fluid.shape, 6.0)
            for axis in _FAMILIES:
                if axis == fam:
                    continue
                for sign in (+1, -1):
                    solid_nb = np.ones(fluid.shape, dtype=bool)
                    src = [slice(None)] * 3
                    dst = [slice(None)] * 3
                    if sign > 0:
                        src[axis] = slice(1, None)
                        dst[axis] = slice(0, -1)
                    else:
                        src[axis] = slice(0, -1)
                        dst[axis] = slice(1, None)
                    solid_nb[tuple(dst)] = ~fluid[tuple(src)]
                    diag += solid_nb
            self._stencil_cache[key] = diag
        return self._stencil_cache[key]

    def _cell_diag(self) -> np.ndarray:
        """Stencil diagonal 6 + (number of solid or wall adjacencies)."""
        key = ("cdiag",)
        if key not in self._stencil_cache:
            fluid = self.cell
            diag = np.full(fluid.shape, 6.0)
            for axis in _FAMILIES:
                for sign in (+1, -1):
                    solid_nb = np.ones(fluid.shape, dtype=bool)
                    src = [slice(None)] * 3
                    dst = [slice(None)] * 3
                    if sign > 0:
                        src[axis] = slice(1, None)
                        dst[axis] = slice(0, -1)
                    else:
                        src[axis] = slice(0, -1)
                        dst[axis] = slice(1, None)
                    solid_nb[tuple(dst)] = ~fluid[tuple(src)]
                    diag += solid_nb
            self._stencil_cache[key] = diag
        return self._stencil_cache[key]

    @property
    def fluid_cell_count(self) -> int:
        return int(np.count_nonzero(self.cell))

    @property
    def fluid_volume(self) -> float:
        return self.fluid_cell_count * self.grid.h ** 3

    def face(self, family: int) -> np.ndarray:
        return self.faces[family]

    @staticmethod
    def all_fluid(grid: GridSpec) -> "Mask":
        cell = np.ones(grid.resolution, dtype=bool)
        return Mask(grid=grid, cell=cell, faces=_faces_from_cells(grid, cell, None))

    @staticmethod
    def from_lattice(lattice: PerforationLattice, grid: GridSpec) -> "Mask":
        if not np.allclose(grid.box.box_min, lattice.domain.box_min) or \
           not np.allclose(grid.box.box_max, lattice.domain.box_max):
            raise ShapeMismatchError("grid box differs from lattice box")

        def solid_at(x, y, z):
            return particle_level(lattice, x, y, z) < 0.0

        return Mask.from_level(grid, solid_at)

    @staticmethod
    def from_level(grid: GridSpec, solid_at) -> "Mask":
        """Build fluid flags from a broadcastable solid-region predicate."""
        cx = grid.cell_centers(0)[:, None, None]
        cy = grid.cell_centers(1)[None, :, None]
        cz = grid.cell_centers(2)[None, None, :]
        cell = ~solid_at(cx, cy, cz)
        return Mask(grid=grid, cell=cell,
                    faces=_faces_from_cells(grid, cell, solid_at))


def _faces_from_cells(grid: GridSpec, cell: np.ndarray, solid_at):
    faces = []
    for fam in _FAMILIES:
        shape = grid.face_shape(fam)
        ok = np.zeros(shape, dtype=bool)
        interior = [slice(None)] * 3
        interior[fam] = slice(1, -1)
        lo = [slice(None)] * 3
        lo[fam] = slice(0, -1)
        hi = [slice(None)] * 3
        hi[fam] = slice(1, None)
        ok[tuple(interior)] = cell[tuple(lo)] & cell[tuple(hi)]
        if solid_at is not None:
            coords = [grid.cell_centers(d) for d in range(3)]
            coords[fam] = grid.face_coords(fam)
            x = coords[0][:, None, None]
            y = coords[1][None, :, None]
            z = coords[2][None, None, :]
            ok &= ~solid_at(x, y, z)
        faces.append(ok)
    return tuple(faces)


def check_connected(mask: Mask) -> None:
    """Raise GeometryError if the fluid cells are empty or disconnected."""
    from scipy import ndimage

    if mask.fluid_cell_count == 0:
        raise GeometryError("fluid region is empty")
    _, num = ndimage.label(mask.cell)
    if num != 1:
        raise GeometryError(f"fluid region has {num} connected components")


def _check_scalar(p: np.ndarray, mask: Mask):
    if p.shape != tuple(mask.grid.resolution):
        raise ShapeMismatchError(f"scalar shape {p.shape} != grid {mask.grid.resolution}")


def _check_vector(u: VectorField, mask: Mask):
    for fam in _FAMILIES:
        if u[fam].shape != mask.grid.face_shape(fam):
            raise ShapeMismatchError(
                f"vector component {fam} shape {u[fam].shape} != "
                f"{mask.grid.face_shape(fam)}"
            )


def grad(p: np.ndarray, mask: Mask) -> VectorField:
    """Centered difference across each fluid face; zero on solid faces."""
    _check_scalar(p, mask)
    h = mask.grid.h
    out = VectorField.zeros(mask.grid)
    for fam in _FAMILIES:
        comp = out[fam]
        interior = [slice(None)] * 3
        interior[fam] = slice(1, -1)
        comp[tuple(interior)] = np.diff(p, axis=fam) / h
        comp *= mask.faces[fam]
    return out


def div(u: VectorField, mask: Mask, bc: VectorField | None = None) -> np.ndarray:
    """Flux difference per fluid cell; zero on solid cells.

    With ``bc`` given, solid faces contribute the prescribed normal values
    instead of zero (used for lifted inhomogeneous boundary data).
    """
    _check_vector(u, mask)
    h = mask.grid.h
    out = np.zeros(mask.grid.resolution)
    for fam in _FAMILIES:
        vals = np.where(mask.faces[fam], u[fam], bc[fam]) if bc is not None \
            else u[fam] * mask.faces[fam]
        out += np.diff(vals, axis=fam)
    out /= h
    out *= mask.cell
    return out


def _shift_slices(axis: int, sign: int):
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    if sign > 0:
        src[axis] = slice(1, None)
        dst[axis] = slice(0, -1)
    else:
        src[axis] = slice(0, -1)
        dst[axis] = slice(1, None)
    return tuple(src), tuple(dst)


def _component_laplacian(v: np.ndarray, fam: int, mask: Mask,
                         bc_comp: np.ndarray | None) -> np.ndarray:
    """7-point Laplacian of one face component with the BC rules above.

    Out-of-range tangential neighbors are homogeneous walls.  ``bc_comp``
    supplies Dirichlet values stored at in-array solid faces: taken at the
    node for same-axis adjacency, as the midway wall value otherwise.
    """
    h2 = mask.grid.h ** 2
    fluid = mask.faces[fam]
    vm = v * fluid
    acc = vm * (-mask._face_diag(fam))
    for axis in _FAMILIES:
        for sign in (+1, -1):
            src, dst = _shift_slices(axis, sign)
            acc[dst] += vm[src]
    if bc_comp is not None:
        # boundary-data coupling: node value for same-axis solid neighbors,
        # ghost 2*value for tangential ones
        bsol = np.where(fluid, 0.0, bc_comp)
        for axis in _FAMILIES:
            w = 1.0 if axis == fam else 2.0
            for sign in (+1, -1):
                src, dst = _shift_slices(axis, sign)
                acc[dst] += w * bsol[src]
    acc *= fluid
    acc /= h2
    return acc


def laplacian(field, mask: Mask, bc=None):
    """Masked Laplacian for both kinds of fields.

    Vector components treat solid same-axis neighbors as zero at the node and
    solid tangential neighbors by ghost reflection.  Scalars use ghost
    reflection on all six adjacencies (Dirichlet walls at half spacing).
    """
    if isinstance(field, VectorField):
        _check_vector(field, mask)
        comps = []
        for fam in _FAMILIES:
            bc_comp = bc[fam] if bc is not None else None
            comps.append(_component_laplacian(field[fam], fam, mask, bc_comp))
        return VectorField(*comps)
    _check_scalar(field, mask)
    return _scalar_laplacian(field, mask)


def _scalar_laplacian(p: np.ndarray, mask: Mask) -> np.ndarray:
    h2 = mask.grid.h ** 2
    fluid = mask.cell
    pm = p * fluid
    acc = pm * (-mask._cell_diag())
    for axis in _FAMILIES:
        for sign in (+1, -1):
            src, dst = _shift_slices(axis, sign)
            acc[dst] += pm[src]
    acc *= fluid
    acc /= h2
    return acc


def norm(field, p: float, mask: Mask) -> float:
    """L^p quadrature h^3 * sum(|.|^p) over the fluid region (max for p=inf)."""
    if p < 1:
        raise ParameterError(f"norm order must be >= 1, got {p}")
    h3 = mask.grid.h ** 3
    if isinstance(field, VectorField):
        _check_vector(field, mask)
        vals = [np.abs(field[f][mask.faces[f]]) for f in _FAMILIES]
        if np.isinf(p):
            return float(max((v.max() if v.size else 0.0) for v in vals))
        total = sum(float(np.sum(v ** p)) for v in vals)
        return float((h3 * total) ** (1.0 / p))
    _check_scalar(field, mask)
    vals = np.abs(field[mask.cell])
    if np.isinf(p):
        return float(vals.max()) if vals.size else 0.0
    return float((h3 * np.sum(vals ** p)) ** (1.0 / p))


def inner(a, b, mask: Mask) -> float:
    """h^3-weighted inner product over fluid dofs."""
    h3 = mask.grid.h ** 3
    if isinstance(a, VectorField):
        total = 0.0
        for fam in _FAMILIES:
            fl = mask.faces[fam]
            total += float(np.dot(a[fam][fl], b[fam][fl]))
        return h3 * total
    return h3 * float(np.dot(a[mask.cell], b[mask.cell]))


def fluid_mean(p: np.ndarray, mask: Mask) -> float:
    _check_scalar(p, mask)
    n = mask.fluid_cell_count
    if n == 0:
        raise GeometryError("fluid region is empty")
    return float(np.sum(p[mask.cell]) / n)


def gradient_pairing(a: VectorField, b: VectorField, mask: Mask) -> float:
    """Bilinear gradient form between two face fields.

    Values stored at solid faces participate as Dirichlet data.  Pair
    weights: 1 for same-axis adjacency (node Dirichlet), 2 for tangential
    fluid-solid pairs (the wall sits midway), 1 for fluid-fluid.  Solid-solid
    pairs never contribute; out-of-range tangential neighbors act as
    homogeneous walls (ghost term ``2*a*b``).  For zero-extended fields this
    equals ``inner(-laplacian(a), b)`` exactly.
    """
    h = mask.grid.h
    total = 0.0
    for fam in _FAMILIES:
        av = a[fam]
        bv = b[fam]
        fl = mask.faces[fam]
        for axis in _FAMILIES:
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            f_lo = fl[tuple(lo)]
            f_hi = fl[tuple(hi)]
            da = av[tuple(hi)] - av[tuple(lo)]
            db = bv[tuple(hi)] - bv[tuple(lo)]
            prod = da * db
            if axis == fam:
                either = f_lo | f_hi
                total += float(np.sum(prod[either]))
            else:
                both = f_lo & f_hi
                single = (f_lo | f_hi) & ~both
                total += float(np.sum(prod[both]))
                total += 2.0 * float(np.sum(prod[single]))
                # wall ghosts at the tangential array edges
                for edge in (0, -1):
                    sl = [slice(None)] * 3
                    sl[axis] = edge
                    ea = av[tuple(sl)]
                    eb = bv[tuple(sl)]
                    efl = fl[tuple(sl)]
                    total += 2.0 * float(np.sum((ea * eb)[efl]))
    return h * total


def dirichlet_form(u: VectorField, v: VectorField, mask: Mask) -> float:
    """Discrete Dirichlet energy <grad u, grad v> for zero-extended fields."""
    return gradient_pairing(u, v, mask)


def sample_on_faces(grid: GridSpec, fn) -> VectorField:
    """Evaluate an analytic vector function componentwise at face centers."""
    out = []
    for fam in _FAMILIES:
        coords = [grid.cell_centers(d) for d in range(3)]
        coords[fam] = grid.face_coords(fam)
        x = coords[0][:, None, None]
        y = coords[1][None, :, None]
        z = coords[2][None, None, :]
        out.append(np.asarray(fn(x, y, z, fam), dtype=float)
                   * np.ones(grid.face_shape(fam)))
    return VectorField(*out)


def sample_on_cells(grid: GridSpec, fn) -> np.ndarray:
    x = grid.cell_centers(0)[:, None, None]
    y = grid.cell_centers(1)[None, :, None]
    z = grid.cell_centers(2)[None, None, :]
    return np.asarray(fn(x, y, z), dtype=float) * np.ones(grid.resolution)


def zero_extend(u, mask: Mask):
    """Force solid dofs to zero in place; returns the field."""
    if isinstance(u, VectorField):
        for fam in _FAMILIES:
            u[fam][~mask.faces[fam]] = 0.0
        return u
    u[~mask.cell] = 0.0
    return u
