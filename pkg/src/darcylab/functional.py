"""Divergence right-inverse, Poincare constant, and scalar power equivalences.

The divergence right-inverse is realized as the minimal-energy solve of the
divergence-data Stokes system; any bounded right inverse with the correct
eps-scaling of its operator norm serves the verification purpose, and this
one is computable on the masked grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as G
from .errors import ParameterError, SolverConvergenceError
from .grid import GridSpec, Mask, VectorField
from .spectral import masked_cg
from .stokes import SolverTolerances, solve_saddle


@dataclass
class BogovskiiResult:
    v: VectorField
    divergence_residual: float
    h1_seminorm: float
    l2_norm: float
    iterations: int
    multiplier: np.ndarray | None = None


@dataclass
class PoincareEstimate:
    lambda_min: float
    constant: float
    iterations: int


def bogovskii(f: np.ndarray, lattice, gridspec: GridSpec,
              tol: SolverTolerances, mask: Mask | None = None) -> BogovskiiResult:
    """Velocity field with div v = f - <f> and v = 0 on all solid faces."""
    if mask is None:
        mask = Mask.from_lattice(lattice, gridspec)
    G.check_connected(mask)
    g = f * mask.cell
    g = g - G.fluid_mean(g, mask) * mask.cell
    sol = solve_saddle(mask, VectorField.zeros(mask.grid), tol, constraint_rhs=g)
    resid = G.norm(G.div(sol.u, mask) - g, 2, mask)
    return BogovskiiResult(
        v=sol.u,
        divergence_residual=resid,
        h1_seminorm=float(np.sqrt(max(G.dirichlet_form(sol.u, sol.u, mask), 0.0))),
        l2_norm=G.norm(sol.u, 2, mask),
        iterations=sol.iterations,
        multiplier=sol.p,
    )


def bogovskii_norm_probe(lattice, gridspec: GridSpec, tol: SolverTolerances,
                         mask: Mask | None = None, probes: int = 6,
                         power_steps: int = 2, seed: int = 1234):
    """Lower bound for sup ||grad B(f)|| / ||f|| by randomized probing.

    Draws mean-zero random fields, then sharpens the best candidate with
    power-iteration steps on B*B.  For the minimal-energy right inverse the
    adjoint composition is explicit: testing the saddle system of f with the
    solution of g gives <Bf, Bg>_H1 = <lambda_f - <lambda_f>, g>, so
    B*B f is the mean-zero Lagrange multiplier of the f-solve.
    Returns (estimate, per-probe ratios, relative divergence residuals).
    """
    if mask is None:
        mask = Mask.from_lattice(lattice, gridspec)
    rng = np.random.default_rng(seed)
    ratios = []
    residuals = []
    best_ratio = -1.0
    best_mult = None
    for _ in range(probes):
        f = rng.standard_normal(gridspec.resolution)
        f *= mask.cell
        res = bogovskii(f, lattice, gridspec, tol, mask=mask)
        fn = G.norm(f - G.fluid_mean(f, mask) * mask.cell, 2, mask)
        ratio = res.h1_seminorm / fn
        ratios.append(ratio)
        residuals.append(res.divergence_residual / max(fn, 1e-300))
        if ratio > best_ratio:
            best_ratio = ratio
            best_mult = res.multiplier
    for _ in range(power_steps):
        cn = G.norm(best_mult, 2, mask)
        if cn == 0.0:
            break
        f = best_mult / cn
        res = bogovskii(f, lattice, gridspec, tol, mask=mask)
        fn = G.norm(f - G.fluid_mean(f, mask) * mask.cell, 2, mask)
        ratio = res.h1_seminorm / fn
        ratios.append(ratio)
        residuals.append(res.divergence_residual / max(fn, 1e-300))
        if ratio > best_ratio:
            best_ratio = ratio
        best_mult = res.multiplier
    return best_ratio, ratios, residuals


def poincare_constant(lattice, gridspec: GridSpec, tol: float = 1e-6,
                      mask: Mask | None = None, max_power_iters: int = 80,
                      cg_rtol: float = 1e-9) -> PoincareEstimate:
    """Smallest Dirichlet-Laplacian eigenvalue by inverse power iteration."""
    if mask is None:
        mask = Mask.from_lattice(lattice, gridspec)
    G.check_connected(mask)
    grid = mask.grid

    def op(v):
        return -G._scalar_laplacian(v, mask)

    x = np.ones(grid.resolution) * mask.cell
    x /= np.sqrt(np.sum(x * x))
    lam = None
    its = 0
    for its in range(1, max_power_iters + 1):
        y, _, _ = masked_cg(op, x, mask.cell, grid, None, cg_rtol, 800)
        lam_new = float(np.sum(x * y) / np.sum(y * y))
        y /= np.sqrt(np.sum(y * y))
        x = y
        if lam is not None and abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise SolverConvergenceError(
            f"inverse power iteration did not settle in {max_power_iters} steps")
    return PoincareEstimate(lambda_min=lam, constant=lam ** -0.5, iterations=its)


def gamma_mean_equiv(samples: np.ndarray, a: float):
    """Two-sided comparability of |f^a - <f>^a|^2 and |f^a - <f^a>|^2 sums."""
    f = np.asarray(samples, dtype=float)
    if np.any(f < 0.0):
        raise ParameterError("samples must be nonnegative")
    if a <= 0.5:
        raise ParameterError(f"exponent must exceed 1/2, got {a}")
    fa = f ** a
    s1 = float(np.sum((fa - np.mean(f) ** a) ** 2))
    s2 = float(np.sum((fa - np.mean(fa)) ** 2))
    floor = float(np.sum(fa * fa)) * 1e-28  # roundoff of the means
    if s1 <= floor and s2 <= floor:
        return 1.0, s1, s2
    return s1 / s2, s1, s2


def gamma_bregman_equiv(a: float, b: float, gamma: float):
    """Bregman gap of t^gamma/gamma at (a, b) and the matching square.

    Returns (lhs, rhs) with lhs = a^g/g - b^g/g - b^(g-1)(a-b) and
    rhs = (a^(g/2) - b^(g/2))^2; the two are two-sided comparable with
    gamma-dependent constants, and lhs/rhs = 1/2 exactly at gamma = 2.
    """
    if gamma <= 1.0:
        raise ParameterError(f"gamma must exceed 1, got {gamma}")
    if a < 0.0 or b < 0.0:
        raise ParameterError("arguments must be nonnegative")
    if a == 0.0 and b == 0.0:
        raise ParameterError("arguments must not both vanish")
    lhs = a ** gamma / gamma - b ** gamma / gamma - b ** (gamma - 1.0) * (a - b)
    rhs = (a ** (gamma / 2.0) - b ** (gamma / 2.0)) ** 2
    return float(lhs), float(rhs)
