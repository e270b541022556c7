"""Exterior Stokes flow around the reference particle and its drag matrix.

The condition w = e_k at infinity is replaced by w = e_k on the boundary of
the truncated box [-L, L]^3; the leading truncation error of the drag is
O(1/L) because the exterior solution approaches its limit like 1/|x|, so a
ladder of L values is Richardson-extrapolated with the model
Rbar(L) = Rbar_inf + c/L.

Drag is evaluated variationally: pairing the momentum operator of solution
k against the lifted test field (w_j - e_j) reduces, up to solver residual,
to the discrete reaction force on the particle.  A control-box momentum
flux provides an independent surface-stress estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid as G
from .errors import ExtrapolationError, ParameterError, ResolutionError
from .geometry import DomainSpec, ReferenceShape, sigma
from .grid import GridSpec, Mask, VectorField
from .stokes import SolverTolerances, solve_saddle


@dataclass
class CellSolution:
    """One directional exterior solve on the truncated box."""

    w: VectorField            # full arrays, boundary data included
    q: np.ndarray             # mean-zero pressure on fluid cells
    direction: int            # 0..2
    truncation: float         # L
    grid: GridSpec
    mask: Mask
    shape: ReferenceShape
    iterations: int = 0
    divergence_residual: float = 0.0


@dataclass
class ResistanceMatrix:
    R: np.ndarray
    Rbar: np.ndarray
    ladder: list            # [(L, Rbar_L 3x3), ...]
    symmetry_defect: float
    min_eigenvalue: float

    def __post_init__(self):
        if self.min_eigenvalue <= 0.0:
            raise ParameterError(
                f"resistance matrix is not positive definite "
                f"(min eigenvalue {self.min_eigenvalue:.3e})")


def _cell_mask(shape: ReferenceShape, L: float, n: int) -> tuple[GridSpec, Mask]:
    box = DomainSpec.cube(2.0 * L, origin=(-L, -L, -L))
    grid = GridSpec.cover(box, n)
    mask = Mask.from_level(grid, lambda x, y, z: shape.level(x, y, z) < 0.0)
    return grid, mask


def particle_bc(mask: Mask, direction: int, value: float) -> VectorField:
    """Dirichlet data equal to value*e_k on particle faces, zero on walls."""
    bc = VectorField.zeros(mask.grid)
    comp = bc[direction]
    solid = ~mask.faces[direction]
    wall = np.zeros_like(solid)
    sl = [slice(None)] * 3
    sl[direction] = 0
    wall[tuple(sl)] = True
    sl[direction] = -1
    wall[tuple(sl)] = True
    comp[solid & ~wall] = value
    return bc


def solve_cell_problem(shape: ReferenceShape, direction: int, L: float,
                       resolution: int,
                       tol: SolverTolerances | None = None) -> CellSolution:
    """Stokes flow past the particle with w = e_k on the truncated box.

    Solved in the perturbation variable v = w - e_k, which vanishes on the
    outer boundary and equals -e_k on the particle.
    """
    if direction not in (0, 1, 2):
        raise ParameterError(f"direction must be 0, 1 or 2, got {direction}")
    if L < 4.0 * shape.bounding_radius:
        raise ParameterError(
            f"truncation L={L} below 4 bounding radii "
            f"({4 * shape.bounding_radius})")
    grid, mask = _cell_mask(shape, L, resolution)
    cells_across = 2.0 * shape.bounding_radius / grid.h
    if cells_across < 8.0:
        raise ResolutionError(
            f"particle resolved by {cells_across:.1f} < 8 cells across")
    if tol is None:
        tol = SolverTolerances(momentum_tol=1e-4, divergence_tol=1e-6,
                               max_outer=300)
    bc = particle_bc(mask, direction, -1.0)
    sol = solve_saddle(mask, VectorField.zeros(grid), tol, bc=bc)

    w = VectorField.zeros(grid)
    for fam in range(3):
        w[fam][...] = sol.u[fam]
        if fam == direction:
            w[fam] += 1.0
    # particle faces carry the no-slip value exactly
    pf = particle_face_mask(mask)
    for fam in range(3):
        w[fam][pf[fam]] = 0.0
    return CellSolution(w=w, q=sol.p, direction=direction, truncation=L,
                        grid=grid, mask=mask, shape=shape,
                        iterations=sol.iterations,
                        divergence_residual=sol.divergence_residual)


def particle_face_mask(mask: Mask):
    """Solid faces that belong to the particle (not the outer walls)."""
    out = []
    for fam in range(3):
        solid = ~mask.faces[fam]
        sl = [slice(None)] * 3
        sl[fam] = 0
        solid[tuple(sl)] = False
        sl[fam] = -1
        solid[tuple(sl)] = False
        out.append(solid)
    return out


def cube_symmetric_mask(mask: Mask) -> bool:
    """True if the cell flags are invariant under all axis swaps."""
    c = mask.cell
    if c.shape[0] != c.shape[1] or c.shape[1] != c.shape[2]:
        return False
    return (np.array_equal(c, c.transpose(1, 0, 2))
            and np.array_equal(c, c.transpose(2, 1, 0))
            and np.array_equal(c, c.transpose(0, 2, 1)))


def rotate_solution(sol: CellSolution, direction: int) -> CellSolution:
    """Directional solution by axis swap for cube-symmetric particles.

    A coordinate swap x_k <-> x_j maps the solution for e_j to the one for
    e_k: components permute and their arrays transpose accordingly.
    """
    j = sol.direction
    if direction == j:
        return sol
    perm = list(range(3))
    perm[j], perm[direction] = perm[direction], perm[j]
    axes = tuple(perm)
    comps = [None, None, None]
    for fam in range(3):
        comps[perm[fam]] = np.ascontiguousarray(sol.w[fam].transpose(axes))
    w = VectorField(*comps)
    q = np.ascontiguousarray(sol.q.transpose(axes))
    return CellSolution(w=w, q=q, direction=direction,
                        truncation=sol.truncation, grid=sol.grid,
                        mask=sol.mask, shape=sol.shape,
                        iterations=sol.iterations,
                        divergence_residual=sol.divergence_residual)


def drag_pairing(wk: CellSolution, wj: CellSolution) -> float:
    """Variational drag entry Rbar_jk on one truncated box.

    The Dirichlet energy pairing of the perturbation fields v = w - e equals
    the momentum flux through the outer boundary, i.e. the full drag
    (viscous plus pressure).  The divergence term pairs the pressure with
    the full-array divergence of the test field, which is solver-residual
    sized; it is kept so the entry reduces exactly to the discrete momentum
    balance.  The perturbation fields vanish on the outer walls, matching
    the homogeneous wall-ghost convention of the gradient form.
    """
    mask = wk.mask
    vk = VectorField(*(wk.w[f].copy() for f in range(3)))
    vk[wk.direction] -= 1.0
    vj = VectorField(*(wj.w[f].copy() for f in range(3)))
    vj[wj.direction] -= 1.0
    form = G.gradient_pairing(vk, vj, mask)
    qterm = G.inner(wk.q, G.div(vj, mask, bc=vj), mask)
    return form - qterm


def surface_stress_drag(sol: CellSolution, margin: int = 3) -> np.ndarray:
    """Momentum flux through a control box around the particle.

    Sums the free (unmasked) momentum stencil over the fluid faces of a box
    strictly containing the particle; discrete conservation telescopes the
    interior so the sum equals the traction transmitted through the box
    boundary.  Independent of the variational pairing and first order on
    the staircase surface.
    """
    grid = sol.grid
    h = grid.h
    n = grid.resolution
    rad_cells = int(np.ceil(sol.shape.bounding_radius / h))
    force = np.zeros(3)
    q = sol.q
    for j in range(3):
        wj = sol.w[j]
        # free 7-point stencil on interior faces, plus the pressure gradient
        lap = np.zeros_like(wj)
        core = (slice(1, -1), slice(1, -1), slice(1, -1))
        acc = -6.0 * wj[core]
        for axis in range(3):
            for sign in (+1, -1):
                sl = [slice(1, -1)] * 3
                sl[axis] = slice(2, None) if sign > 0 else slice(0, -2)
                acc = acc + wj[tuple(sl)]
        lap[core] = acc / (h * h)
        gq = np.zeros_like(wj)
        interior = [slice(None)] * 3
        interior[j] = slice(1, -1)
        gq[tuple(interior)] = np.diff(q, axis=j) / h
        M = -lap + gq
        lo = [n[d] // 2 - rad_cells - margin for d in range(3)]
        hi = [n[d] // 2 + rad_cells + margin for d in range(3)]
        if min(lo) < 2 or any(hi[d] > n[d] - 2 for d in range(3)):
            raise ParameterError("control box does not fit inside the domain")
        box = [slice(lo[d], hi[d]) for d in range(3)]
        box[j] = slice(lo[j], hi[j] + 1)
        # sum over every face in the block, solid ones included: the free
        # stencil telescopes to the momentum flux through the block boundary,
        # which by equilibrium is the force the particle exerts
        force[j] = -float(np.sum(M[tuple(box)])) * h ** 3
    return force


def solve_all_directions(shape: ReferenceShape, L: float, resolution: int,
                         tol: SolverTolerances | None = None,
                         reuse_symmetry: bool = True) -> list[CellSolution]:
    """Three directional solves; cube-symmetric masks reuse one solve."""
    first = solve_cell_problem(shape, 0, L, resolution, tol)
    if reuse_symmetry and cube_symmetric_mask(first.mask):
        return [first, rotate_solution(first, 1), rotate_solution(first, 2)]
    return [first,
            solve_cell_problem(shape, 1, L, resolution, tol),
            solve_cell_problem(shape, 2, L, resolution, tol)]


def drag_matrix_at(solutions: list[CellSolution]) -> np.ndarray:
    """Rbar on one truncated box from the three directional solutions."""
    if len(solutions) != 3:
        raise ParameterError("need all three directional solutions")
    L = solutions[0].truncation
    n = solutions[0].grid.resolution
    for s in solutions[1:]:
        if s.truncation != L or s.grid.resolution != n:
            raise ParameterError("solutions differ in truncation or resolution")
    rbar = np.empty((3, 3))
    for k in range(3):
        for j in range(3):
            rbar[j, k] = drag_pairing(solutions[k], solutions[j])
    return rbar


def extrapolate_ladder(ladder: list[tuple[float, np.ndarray]]) -> np.ndarray:
    """Entrywise least-squares fit Rbar(L) = Rbar_inf + c / L."""
    if len(ladder) < 2:
        raise ExtrapolationError("need at least two truncation values")
    Ls = np.array([l for l, _ in ladder], dtype=float)
    A = np.vstack([np.ones_like(Ls), 1.0 / Ls]).T
    vals = np.stack([m for _, m in ladder])       # (npts, 3, 3)
    coef, *_ = np.linalg.lstsq(A, vals.reshape(len(Ls), 9), rcond=None)
    return coef[0].reshape(3, 3)


def drag_matrix(ladder: list[tuple[float, np.ndarray]]) -> ResistanceMatrix:
    """Extrapolated resistance matrices from a truncation ladder."""
    rbar = extrapolate_ladder(ladder)
    defect = float(np.linalg.norm(rbar - rbar.T) / np.linalg.norm(rbar))
    rbar = 0.5 * (rbar + rbar.T)
    eigs = np.linalg.eigvalsh(rbar)
    return ResistanceMatrix(R=rbar / 8.0, Rbar=rbar,
                            ladder=[(float(l), np.asarray(m)) for l, m in ladder],
                            symmetry_defect=defect,
                            min_eigenvalue=float(eigs.min()))


def compute_resistance(shape: ReferenceShape, truncations, resolutions,
                       tol: SolverTolerances | None = None,
                       reuse_symmetry: bool = True):
    """Run the full truncation ladder and extrapolate.

    Returns (ResistanceMatrix, details) where details carries per-L surface
    stress cross-checks and iteration counts.
    """
    ladder = []
    details = []
    for L, n in zip(truncations, resolutions):
        sols = solve_all_directions(shape, L, n, tol, reuse_symmetry)
        rb = drag_matrix_at(sols)
        surf = surface_stress_drag(sols[0])
        details.append({
            "L": float(L), "resolution": int(n),
            "Rbar_L": rb.tolist(),
            "surface_drag_dir0": surf.tolist(),
            "iterations": [s.iterations for s in sols],
        })
        ladder.append((float(L), rb))
        del sols
    return drag_matrix(ladder), details


def brinkman_density(R: ResistanceMatrix, eps: float, alpha: float) -> np.ndarray:
    """Friction coefficient sigma^-2 R of the approximate momentum balance."""
    s = sigma(eps, alpha)
    return R.R / (s * s)


def farfield_profile(sol: CellSolution, nshells: int = 24):
    """Shell-averaged |w - e_k| against radius, for decay-rate checks."""
    grid = sol.grid
    mask = sol.mask
    # cell-centered speed of the deviation field
    dev = []
    for fam in range(3):
        comp = sol.w[fam] - (1.0 if fam == sol.direction else 0.0)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[fam] = slice(0, -1)
        hi[fam] = slice(1, None)
        dev.append(0.5 * (comp[tuple(lo)] + comp[tuple(hi)]))
    mag = np.sqrt(dev[0] ** 2 + dev[1] ** 2 + dev[2] ** 2)
    x = grid.cell_centers(0)[:, None, None]
    y = grid.cell_centers(1)[None, :, None]
    z = grid.cell_centers(2)[None, None, :]
    r = np.sqrt(x * x + y * y + z * z) * np.ones_like(mag)
    a = sol.shape.bounding_radius
    rmin, rmax = 1.5 * a, sol.truncation / 2.0
    edges = np.geomspace(rmin, rmax, nshells + 1)
    radii = []
    values = []
    fl = mask.cell
    for i in range(nshells):
        sel = (r >= edges[i]) & (r < edges[i + 1]) & fl
        if np.count_nonzero(sel) < 8:
            continue
        radii.append(float(np.sqrt(edges[i] * edges[i + 1])))
        values.append(float(mag[sel].mean()))
    return np.array(radii), np.array(values)


def sample_velocity(sol: CellSolution, points: np.ndarray) -> np.ndarray:
    """Trilinear sample of w at arbitrary points (N, 3) -> (N, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grid = sol.grid
    h = grid.h
    out = np.empty((pts.shape[0], 3))
    for fam in range(3):
        comp = sol.w[fam]
        origin = [grid.box.box_min[d] + 0.5 * h for d in range(3)]
        origin[fam] = grid.box.box_min[fam]
        gidx = (pts - np.array(origin)) / h
        out[:, fam] = _trilinear(comp, gidx)
    return out


def sample_pressure(sol: CellSolution, points: np.ndarray) -> np.ndarray:
    """Trilinear sample of the cell-centered pressure at points (N, 3)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    grid = sol.grid
    h = grid.h
    origin = np.array([grid.box.box_min[d] + 0.5 * h for d in range(3)])
    gidx = (pts - origin) / h
    return _trilinear(sol.q, gidx)


def _trilinear(arr: np.ndarray, gidx: np.ndarray) -> np.ndarray:
    n = arr.shape
    i0 = np.clip(np.floor(gidx).astype(np.int64), 0,
                 np.array(n) - 2)
    t = np.clip(gidx - i0, 0.0, 1.0)
    val = np.zeros(gidx.shape[0])
    for dx in (0, 1):
        wx = (1 - t[:, 0]) if dx == 0 else t[:, 0]
        for dy in (0, 1):
            wy = (1 - t[:, 1]) if dy == 0 else t[:, 1]
            for dz in (0, 1):
                wz = (1 - t[:, 2]) if dz == 0 else t[:, 2]
                val += wx * wy * wz * arr[i0[:, 0] + dx, i0[:, 1] + dy,
                                          i0[:, 2] + dz]
    return val
