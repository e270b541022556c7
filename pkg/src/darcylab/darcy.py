"""Limit Darcy system and the Brinkman intermediate model on the plain box.

The Darcy pressure solves an anisotropic Neumann problem assembled from the
energy form sum_faces (grad p)^T Rinv (grad p); cross terms go through
cell-averaged gradients, which keeps the operator symmetric.  The velocity
is reconstructed from the same face fluxes, so its discrete divergence is
the solver residual and the normal trace vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as G
from .cellproblem import ResistanceMatrix
from .compressible import ForcingSpec
from .errors import ParameterError, SolverConvergenceError
from .geometry import sigma
from .grid import GridSpec, Mask, VectorField
from .spectral import get_neumann_plan
from .stokes import SolverTolerances, StokesSolution, saddle_minres


@dataclass
class DarcySolution:
    u: VectorField
    p: np.ndarray
    R_used: np.ndarray
    rho0: float
    divergence_residual: float
    iterations: int


def _forcing_at_faces(forcing: ForcingSpec, rho0: float, grid: GridSpec):
    """All three components of rho0 f + g evaluated at each face family."""
    out = []
    for fam in range(3):
        coords = [grid.cell_centers(d) for d in range(3)]
        coords[fam] = grid.face_coords(fam)
        x = coords[0][:, None, None]
        y = coords[1][None, :, None]
        z = coords[2][None, None, :]
        comps = []
        for c in range(3):
            val = rho0 * forcing.f.evaluate(grid, x, y, z, c) \
                + forcing.g.evaluate(grid, x, y, z, c)
            comps.append(val * np.ones(grid.face_shape(fam)))
        out.append(comps)
    return out


def _check_spd(R: np.ndarray):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ParameterError("resistance matrix must be 3x3")
    if np.linalg.norm(R - R.T) > 1e-8 * np.linalg.norm(R):
        raise ParameterError("resistance matrix must be symmetric")
    if np.linalg.eigvalsh(R).min() <= 0.0:
        raise ParameterError("resistance matrix must be positive definite")
    return R


class _NeumannOperator:
    """A p = -div(Rinv grad p) with zero-flux walls, energy-symmetric."""

    def __init__(self, grid: GridSpec, Rinv: np.ndarray):
        self.grid = grid
        self.Rinv = Rinv

    def _face_grads(self, p):
        h = self.grid.h
        return [np.diff(p, axis=d) / h for d in range(3)]

    def _cell_avg(self, gd, d):
        out = np.zeros(self.grid.resolution)
        lo = [slice(None)] * 3
        lo[d] = slice(0, -1)
        hi = [slice(None)] * 3
        hi[d] = slice(1, None)
        out[tuple(lo)] += 0.5 * gd
        out[tuple(hi)] += 0.5 * gd
        return out

    def fluxes(self, p):
        """Interior-face fluxes of Rinv grad p (diagonal plus cross terms)."""
        grads = self._face_grads(p)
        cell_g = [self._cell_avg(grads[d], d) for d in range(3)]
        fluxes = []
        for d in range(3):
            flux = self.Rinv[d, d] * grads[d]
            cross = np.zeros(self.grid.resolution)
            for e in range(3):
                if e != d:
                    cross += self.Rinv[d, e] * cell_g[e]
            lo = [slice(None)] * 3
            lo[d] = slice(0, -1)
            hi = [slice(None)] * 3
            hi[d] = slice(1, None)
            flux = flux + 0.5 * (cross[tuple(lo)] + cross[tuple(hi)])
            fluxes.append(flux)
        return fluxes

    def apply(self, p):
        h = self.grid.h
        out = np.zeros(self.grid.resolution)
        for d, flux in enumerate(self.fluxes(p)):
            padded = np.zeros(self.grid.face_shape(d))
            interior = [slice(None)] * 3
            interior[d] = slice(1, -1)
            padded[tuple(interior)] = flux
            out -= np.diff(padded, axis=d) / h
        return out


def solve_darcy(gridspec: GridSpec, R, rho0: float, forcing: ForcingSpec,
                tol: SolverTolerances) -> DarcySolution:
    """Neumann pressure solve and flux-consistent Darcy velocity."""
    Rm = R.R if isinstance(R, ResistanceMatrix) else np.asarray(R, dtype=float)
    Rm = _check_spd(Rm)
    Rinv = np.linalg.inv(Rm)
    grid = gridspec
    h = grid.h
    ncell = int(np.prod(grid.resolution))

    op = _NeumannOperator(grid, Rinv)
    F = _forcing_at_faces(forcing, rho0, grid)

    # rhs: -div of the interior-face fluxes Rinv (rho0 f + g)
    b = np.zeros(grid.resolution)
    rinvF = []
    for d in range(3):
        comp = sum(Rinv[d, e] * F[d][e] for e in range(3))
        rinvF.append(comp)
        masked = comp.copy()
        sl = [slice(None)] * 3
        sl[d] = 0
        masked[tuple(sl)] = 0.0
        sl[d] = -1
        masked[tuple(sl)] = 0.0
        b -= np.diff(masked, axis=d) / h
    b -= b.mean()

    plan = get_neumann_plan(grid, weights=tuple(np.diag(Rinv)))

    p = np.zeros(grid.resolution)
    r = b.copy()
    z = plan.solve(r)
    d_dir = z.copy()
    rz = float(np.sum(r * z))
    bnorm = max(np.sqrt(float(np.sum(b * b))), 1e-300)
    it = 0
    target = tol.divergence_tol / h ** 1.5
    while it < tol.max_outer * 6:
        res = np.sqrt(float(np.sum(r * r)))
        if res <= max(target, 1e-14 * bnorm):
            break
        Ad = op.apply(d_dir)
        Ad -= Ad.mean()
        alpha = rz / float(np.sum(d_dir * Ad))
        p += alpha * d_dir
        r -= alpha * Ad
        r -= r.mean()
        z = plan.solve(r)
        rz_new = float(np.sum(r * z))
        d_dir = z + (rz_new / rz) * d_dir
        rz = rz_new
        it += 1
    else:
        raise SolverConvergenceError(
            f"Darcy pressure CG stalled at residual {res:.3e}")
    p -= p.mean()

    # velocity from the same flux expressions: u = Rinv(F) - Rinv grad p
    u = VectorField.zeros(grid)
    pf = op.fluxes(p)
    for d in range(3):
        interior = [slice(None)] * 3
        interior[d] = slice(1, -1)
        u[d][tuple(interior)] = rinvF[d][tuple(interior)] - pf[d]
    mask = Mask.all_fluid(grid)
    div_res = G.norm(G.div(u, mask), 2, mask)
    return DarcySolution(u=u, p=p, R_used=Rm, rho0=float(rho0),
                         divergence_residual=div_res, iterations=it)


def solve_brinkman(gridspec: GridSpec, R, eps: float, alpha: float,
                   rho0: float, forcing: ForcingSpec,
                   tol: SolverTolerances) -> StokesSolution:
    """-lap u + sigma^-2 R u + grad p = rho0 f + g on the unperforated box."""
    Rm = R.R if isinstance(R, ResistanceMatrix) else np.asarray(R, dtype=float)
    Rm = _check_spd(Rm)
    s = sigma(eps, alpha)
    coef = Rm / (s * s)
    grid = gridspec
    mask = Mask.all_fluid(grid)

    F = _forcing_at_faces(forcing, rho0, grid)
    rhs = VectorField(*(F[d][d] for d in range(3)))

    def friction(u: VectorField) -> VectorField:
        out = VectorField.zeros(grid)
        for d in range(3):
            acc = coef[d, d] * u[d]
            for e in range(3):
                if e == d or coef[d, e] == 0.0:
                    continue
                acc = acc + coef[d, e] * _face_to_face(u[e], e, d, grid)
            out[d][...] = acc * mask.faces[d]
        return out

    shift = float(np.mean(np.diag(coef)))
    return saddle_minres(mask, rhs, tol, extra_momentum=friction,
                         precond_shift=shift)


def _face_to_face(ue: np.ndarray, e: int, d: int, grid: GridSpec) -> np.ndarray:
    """Average component e from its own faces onto the d-face lattice."""
    # first to cells along e, then to faces along d
    lo = [slice(None)] * 3
    lo[e] = slice(0, -1)
    hi = [slice(None)] * 3
    hi[e] = slice(1, None)
    cells = 0.5 * (ue[tuple(lo)] + ue[tuple(hi)])
    out = np.zeros(grid.face_shape(d))
    interior = [slice(None)] * 3
    interior[d] = slice(1, -1)
    lo = [slice(None)] * 3
    lo[d] = slice(0, -1)
    hi = [slice(None)] * 3
    hi[d] = slice(1, None)
    out[tuple(interior)] = 0.5 * (cells[tuple(lo)] + cells[tuple(hi)])
    return out