"""Fast sine-transform Poisson solvers on the unperforated box.

These diagonalize the unmasked 7-point Laplacians that the grid module
defines, and serve as preconditioners for the masked conjugate-gradient
solves.  Per axis the eigenbasis depends on where the degrees of freedom
sit relative to the Dirichlet walls:

* face nodes on the wall  -> interior DST-I of size n-1,
* half-sample offsets     -> DST-II of size n (ghost reflection walls).

Both have eigenvalues (2 - 2 cos(pi k / n)) / h^2.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dst, idst

from .grid import GridSpec, Mask, VectorField

_plan_cache: dict = {}


def _axis_kinds(family: int | None):
    """Transform kind per axis: the component's own axis is node-centered."""
    if family is None:
        return ("half", "half", "half")
    return tuple("node" if d == family else "half" for d in range(3))


def _eigenvalues(n: int, h: float, kind: str) -> np.ndarray:
    if kind == "node":
        k = np.arange(1, n)
    else:
        k = np.arange(1, n + 1)
    return (2.0 - 2.0 * np.cos(np.pi * k / n)) / (h * h)


class PoissonPlan:
    """Cached transform plan for one dof layout on one grid."""

    def __init__(self, grid: GridSpec, family: int | None):
        self.grid = grid
        self.family = family
        self.kinds = _axis_kinds(family)
        lams = [
            _eigenvalues(grid.resolution[d], grid.h, self.kinds[d])
            for d in range(3)
        ]
        self.lam = (lams[0][:, None, None] + lams[1][None, :, None]
                    + lams[2][None, None, :])

    def _forward(self, a: np.ndarray) -> np.ndarray:
        for d, kind in enumerate(self.kinds):
            a = dst(a, type=1 if kind == "node" else 2, axis=d)
        return a

    def _backward(self, a: np.ndarray) -> np.ndarray:
        for d, kind in enumerate(self.kinds):
            a = idst(a, type=1 if kind == "node" else 2, axis=d)
        return a

    def solve(self, b: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """Exact unmasked solve of (-lap + shift) x = b for this dof layout.

        For face components ``b`` is the full array including boundary
        faces; those rows are ignored and return zero.
        """
        if self.family is not None:
            core = [slice(None)] * 3
            core[self.family] = slice(1, -1)
            t = self._forward(np.ascontiguousarray(b[tuple(core)]))
            t /= (self.lam + shift)
            out = np.zeros_like(b)
            out[tuple(core)] = self._backward(t)
            return out
        t = self._forward(b)
        t /= (self.lam + shift)
        return self._backward(t)


def get_plan(grid: GridSpec, family: int | None) -> PoissonPlan:
    key = (grid.resolution, round(grid.h, 14), family)
    plan = _plan_cache.get(key)
    if plan is None:
        plan = PoissonPlan(grid, family)
        _plan_cache[key] = plan
    return plan


class NeumannPlan:
    """DCT-based solve of the cell-centered Neumann Poisson operator.

    The zero mode is projected out: input and output are mean-free over the
    box.  ``weights`` scales the per-axis eigenvalues (anisotropic media).
    """

    def __init__(self, grid: GridSpec, weights=(1.0, 1.0, 1.0)):
        from scipy.fft import dct, idct

        self._dct = dct
        self._idct = idct
        self.grid = grid
        lams = []
        for d in range(3):
            n = grid.resolution[d]
            k = np.arange(n)
            lams.append(weights[d] * (2.0 - 2.0 * np.cos(np.pi * k / n))
                        / (grid.h * grid.h))
        lam = (lams[0][:, None, None] + lams[1][None, :, None]
               + lams[2][None, None, :])
        lam[0, 0, 0] = 1.0
        self.lam = lam

    def solve(self, b: np.ndarray) -> np.ndarray:
        t = b
        for d in range(3):
            t = self._dct(t, type=2, axis=d)
        t = t / self.lam
        t[0, 0, 0] = 0.0
        for d in range(3):
            t = self._idct(t, type=2, axis=d)
        return t


def get_neumann_plan(grid: GridSpec, weights=(1.0, 1.0, 1.0)) -> NeumannPlan:
    key = (grid.resolution, round(grid.h, 14), "neumann",
           tuple(round(w, 12) for w in weights))
    plan = _plan_cache.get(key)
    if plan is None:
        plan = NeumannPlan(grid, weights)
        _plan_cache[key] = plan
    return plan


def clear_plans():
    _plan_cache.clear()


def precondition_component(grid: GridSpec, family: int | None, r: np.ndarray,
                           fluid: np.ndarray) -> np.ndarray:
    """Apply the unmasked inverse restricted to the fluid dofs (SPD)."""
    z = get_plan(grid, family).solve(np.where(fluid, r, 0.0))
    z[~fluid] = 0.0
    return z


def masked_cg(apply_op, b: np.ndarray, fluid: np.ndarray, grid: GridSpec,
              family: int | None, rtol: float, maxiter: int,
              x0: np.ndarray | None = None):
    """Preconditioned CG for one masked SPD component solve.

    ``apply_op`` maps a full array (zero on solid) to the operator image.
    Returns (x, iterations, achieved_relative_residual).
    """
    b = np.where(fluid, b, 0.0)
    bnorm = float(np.sqrt(np.sum(b * b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.where(fluid, x0, 0.0)
        r = b - apply_op(x)
        r[~fluid] = 0.0
    z = precondition_component(grid, family, r, fluid)
    p = z.copy()
    rz = float(np.sum(r * z))
    res = float(np.sqrt(np.sum(r * r))) / bnorm
    it = 0
    while res > rtol and it < maxiter:
        Ap = apply_op(p)
        alpha = rz / float(np.sum(p * Ap))
        x += alpha * p
        r -= alpha * Ap
        res = float(np.sqrt(np.sum(r * r))) / bnorm
        if res <= rtol:
            it += 1
            break
        z = precondition_component(grid, family, r, fluid)
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, it, res


def solve_vector_poisson(rhs: VectorField, mask: Mask, rtol: float,
                         maxiter: int, bc: VectorField | None = None,
                         x0: VectorField | None = None):
    """Solve (-lap) u = rhs componentwise on the masked grid.

    Returns (u, iterations_per_component, residuals_per_component).
    """
    from .grid import _component_laplacian  # local import to avoid cycle

    comps = []
    iters = []
    residuals = []
    for fam in range(3):
        fluid = mask.faces[fam]
        b = rhs[fam].copy()
        if bc is not None:
            # fold inhomogeneous Dirichlet data into the right-hand side:
            # -lap(u; bc) = -lap(u; 0) - lap(0; bc)
            coupling = _component_laplacian(np.zeros_like(b), fam, mask, bc[fam])
            b += coupling
        def op(v, fam=fam):
            return -_component_laplacian(v, fam, mask, None)
        x, it, res = masked_cg(op, b, fluid, mask.grid, fam, rtol, maxiter,
                               x0=None if x0 is None else x0[fam])
        comps.append(x)
        iters.append(it)
        residuals.append(res)
    return VectorField(*comps), iters, residuals
