"""Steady compressible Stokes at low Mach by damped Picard iteration.

Each step solves the weighted-constraint Stokes problem with the frozen
density, then inverts the barotropic relation rho^gamma = eps^beta (pi + c)
with the constant pinned by the mass constraint.  No convergence theorem is
claimed for the iteration; stagnation is a reported outcome.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import grid as G
from .errors import ParameterError, SolverConvergenceError
from .geometry import PerforationLattice, sigma
from .grid import GridSpec, Mask, VectorField
from .stokes import (SolverTolerances, _face_density, uzawa_solve,
                     weighted_constraint_fixed_point)


@dataclass
class Forcing:
    """Analytic vector-field presets for the body forces f and g."""

    kind: str = "zero"                  # zero | constant | vortex | gradient
    amplitude: tuple = (0.0, 0.0, 0.0)  # vector for constant, (A,0,0) else

    def evaluate(self, grid: GridSpec, x, y, z, comp: int):
        """Component ``comp`` on broadcastable coordinate arrays."""
        box = grid.box
        lx, ly, lz = box.extent
        x0, y0, z0 = box.box_min
        amp = self.amplitude
        if self.kind == "zero":
            return 0.0 * x * y * z
        if self.kind == "constant":
            return amp[comp] + 0.0 * x * y * z
        xn = (x - x0) / lx
        yn = (y - y0) / ly
        if self.kind == "vortex":
            # curl of the stream bump a sin^2(pi x) sin^2(pi y)(1 + s cos(pi y)):
            # divergence free with zero normal trace; the skew s moves the
            # null plane of the first component off the box midplane
            a = amp[0]
            s = amp[1]
            sy = np.sin(np.pi * yn)
            cy = np.cos(np.pi * yn)
            if comp == 0:
                dpsi = np.pi * np.sin(2 * np.pi * yn) * (1.0 + s * cy) \
                    - s * np.pi * sy ** 3
                return (a / ly) * np.sin(np.pi * xn) ** 2 * dpsi
            if comp == 1:
                return -(a * np.pi / lx) * np.sin(2 * np.pi * xn) \
                    * sy ** 2 * (1.0 + s * cy)
            return 0.0 * x * y * z
        if self.kind == "gradient":
            # grad of a*cos(pi xn)cos(pi yn)cos(pi zn); normal trace zero
            a = amp[0]
            zn = (z - z0) / lz
            cx, cy, cz = (np.cos(np.pi * t) for t in (xn, yn, zn))
            sx, sy, sz = (np.sin(np.pi * t) for t in (xn, yn, zn))
            if comp == 0:
                return -a * np.pi / lx * sx * cy * cz
            if comp == 1:
                return -a * np.pi / ly * cx * sy * cz
            return -a * np.pi / lz * cx * cy * sz
        raise ParameterError(f"unknown forcing preset {self.kind!r}")

    def sample(self, grid: GridSpec) -> VectorField:
        return G.sample_on_faces(
            grid, lambda x, y, z, fam: self.evaluate(grid, x, y, z, fam))

    def potential(self, grid: GridSpec) -> np.ndarray | None:
        """Cell-centered potential when the preset is a pure gradient."""
        if self.kind != "gradient":
            return None
        box = grid.box
        x0, y0, z0 = box.box_min
        lx, ly, lz = box.extent
        a = self.amplitude[0]

        def phi(x, y, z):
            return a * np.cos(np.pi * (x - x0) / lx) \
                * np.cos(np.pi * (y - y0) / ly) \
                * np.cos(np.pi * (z - z0) / lz)

        return G.sample_on_cells(grid, phi)


@dataclass
class ForcingSpec:
    f: Forcing = field(default_factory=Forcing)
    g: Forcing = field(default_factory=Forcing)


@dataclass
class CompressibleState:
    rho: np.ndarray
    u: VectorField
    p_eps: np.ndarray
    pi: np.ndarray            # internal Stokes multiplier (mean zero)
    gamma: float
    beta: float
    m0: float
    eps: float
    alpha: float
    iterations: int
    momentum_residual: float
    constraint_residual: float
    density_delta: float
    degenerate: bool
    clipped_fraction: float
    telemetry: list
    energy_form: float = 0.0          # int |grad u|^2
    energy_rhs: float = 0.0           # int (rho f + g) . u
    energy_pressure_work: float = 0.0  # <pi, div_h u>


def _mass_constant(pi: np.ndarray, mask: Mask, eps_beta: float, gamma: float,
                   m0: float):
    """Constant c with integral of (eps^beta (pi + c))_+^(1/gamma) = m0."""
    h3 = mask.grid.h ** 3
    vals = pi[mask.cell]

    def mass(c):
        base = np.maximum(eps_beta * (vals + c), 0.0)
        return h3 * float(np.sum(base ** (1.0 / gamma))) - m0

    # bracket: mean value as the natural center
    v = mask.fluid_volume
    target = (m0 / v) ** gamma / eps_beta
    lo = target - max(1.0, 2.0 * float(np.abs(vals).max(initial=0.0)))
    hi = target + max(1.0, 2.0 * float(np.abs(vals).max(initial=0.0)))
    flo, fhi = mass(lo), mass(hi)
    grow = 0
    while flo > 0.0 and grow < 60:
        lo -= (hi - lo)
        flo = mass(lo)
        grow += 1
    while fhi < 0.0 and grow < 120:
        hi += (hi - lo)
        fhi = mass(hi)
        grow += 1
    c = brentq(mass, lo, hi, xtol=1e-14 * max(1.0, abs(target)),
               rtol=8.9e-16, maxiter=200)
    return float(c)


def solve_steady(lattice: PerforationLattice, gridspec: GridSpec,
                 forcing: ForcingSpec, gamma: float, beta: float, m0: float,
                 tol: SolverTolerances, mask: Mask | None = None,
                 theta: float = 0.5, max_picard: int = 60,
                 density_rtol: float = 1e-9) -> CompressibleState:
    """Damped Picard iteration for the steady low-Mach system."""
    if gamma < 1.0:
        raise ParameterError(f"gamma must be >= 1, got {gamma}")
    if m0 <= 0.0:
        raise ParameterError("total mass must be positive")
    eps = lattice.eps
    alpha = lattice.alpha
    threshold = 1.5 * (gamma + 1.0) * (alpha - 1.0)
    if beta <= threshold:
        warnings.warn(
            f"beta={beta} at or below the convergence-theorem threshold "
            f"{threshold:.3f} for gamma={gamma}, alpha={alpha}",
            stacklevel=2)
    if mask is None:
        mask = Mask.from_lattice(lattice, gridspec)
    G.check_connected(mask)

    h3 = gridspec.h ** 3
    eps_beta = eps ** beta
    f_faces = forcing.f.sample(gridspec)
    g_faces = forcing.g.sample(gridspec)

    rho = np.full(gridspec.resolution, m0 / mask.fluid_volume) * mask.cell
    telemetry = []
    sol = None
    clipped_frac = 0.0
    delta = np.inf
    it = 0
    stall = 0
    best_delta = np.inf

    def weighted_solve(rho_field, prev, solver_tol):
        rho_f = _face_density(rho_field, mask)
        rhs_w = VectorField(*(rho_f[c] * f_faces[c] + g_faces[c]
                              for c in range(3)))
        if solver_tol.method == "minres":
            return weighted_constraint_fixed_point(
                mask, rho_f, rhs_w, solver_tol,
                warm=(prev.u, prev.p) if prev is not None else None)
        return uzawa_solve(mask, rhs_w, solver_tol, rho_faces=rho_f,
                           initial_pressure=prev.p if prev is not None else None)

    # mid-iteration solves only steer the density update, so they run at
    # relaxed tolerances; the returned state comes from a final full solve
    relaxed = SolverTolerances(
        momentum_tol=50.0 * tol.momentum_tol,
        divergence_tol=50.0 * tol.divergence_tol,
        max_outer=tol.max_outer, inner_rtol=tol.inner_rtol,
        inner_maxiter=tol.inner_maxiter, method=tol.method)

    for it in range(1, max_picard + 1):
        sol = weighted_solve(rho, sol, relaxed)
        c = _mass_constant(sol.p, mask, eps_beta, gamma, m0)
        base = eps_beta * (sol.p + c)
        clipped = (base < 0.0) & mask.cell
        clipped_frac = float(np.count_nonzero(clipped)) / mask.fluid_cell_count
        rho_hat = np.maximum(base, 0.0) ** (1.0 / gamma) * mask.cell
        rho_new = (1.0 - theta) * rho + theta * rho_hat
        # renormalize so the mass constraint holds exactly at every step
        total = h3 * float(np.sum(rho_new[mask.cell]))
        rho_new *= m0 / total
        delta = G.norm(rho_new - rho, 2, mask)
        rho = rho_new
        telemetry.append({
            "n": it,
            "momentum_residual": sol.momentum_residual,
            "constraint_residual": sol.divergence_residual,
            "density_delta": delta,
            "clipped_fraction": clipped_frac,
        })
        scale = max(G.norm(rho, 2, mask), 1e-300)
        if delta <= density_rtol * scale:
            break
        if delta > 0.999 * best_delta:
            stall += 1
            if stall >= 50:
                raise SolverConvergenceError(
                    f"Picard stagnation: density delta {delta:.3e} after "
                    f"{it} iterations", history=telemetry)
        else:
            stall = 0
        best_delta = min(best_delta, delta)
    else:
        raise SolverConvergenceError(
            f"Picard did not converge in {max_picard} iterations "
            f"(density delta {delta:.3e})", history=telemetry)

    if clipped_frac > 0.0:
        warnings.warn(
            f"degenerate state: barotropic inversion clipped "
            f"{clipped_frac:.2%} of fluid cells at convergence", stacklevel=2)

    # final consistent solve on the converged density
    sol = weighted_solve(rho, sol, tol)
    rho_f = _face_density(rho, mask)
    rhs = VectorField(*(rho_f[c] * f_faces[c] + g_faces[c] for c in range(3)))

    rho_gamma = rho ** gamma * mask.cell
    mean_rg = G.fluid_mean(rho_gamma, mask)
    p_eps = (rho_gamma - mean_rg) / eps_beta * mask.cell

    div_u = G.div(sol.u, mask)
    state = CompressibleState(
        rho=rho, u=sol.u, p_eps=p_eps, pi=sol.p, gamma=gamma, beta=beta,
        m0=m0, eps=eps, alpha=alpha, iterations=it,
        momentum_residual=sol.momentum_residual,
        constraint_residual=sol.divergence_residual,
        density_delta=delta, degenerate=clipped_frac > 0.0,
        clipped_fraction=clipped_frac, telemetry=telemetry,
        energy_form=G.dirichlet_form(sol.u, sol.u, mask),
        energy_rhs=G.inner(rhs, sol.u, mask),
        energy_pressure_work=G.inner(sol.p, div_u, mask),
    )
    return state


def pressure(state: CompressibleState, mask: Mask) -> np.ndarray:
    """Normalized pressure from the converged density, mean-zero, extended."""
    rho_gamma = state.rho ** state.gamma * mask.cell
    mean_rg = G.fluid_mean(rho_gamma, mask)
    return (rho_gamma - mean_rg) / state.eps ** state.beta * mask.cell


def mass_flux_audit(state: CompressibleState, lattice: PerforationLattice,
                    gridspec: GridSpec, mask: Mask | None = None) -> float:
    """L2 norm of div(rho u) over the whole box with zero extensions.

    Solid faces carry zero momentum, so solid cells contribute nothing and
    the value coincides with the fluid-region norm; measuring on the whole
    box verifies the extension identity discretely.
    """
    if mask is None:
        mask = Mask.from_lattice(lattice, gridspec)
    h = gridspec.h
    rho_f = _face_density(state.rho, mask)
    out = np.zeros(gridspec.resolution)
    for fam in range(3):
        flux = state.u[fam] * rho_f[fam] * mask.faces[fam]
        out += np.diff(flux, axis=fam)
    out /= h
    return float(np.sqrt(np.sum(out ** 2) * h ** 3))
