"""Ladder orchestration: sweeps, rescaled Darcy comparisons, rate fits.

Every sweep emits one record per ladder point plus fitted exponents with
their targets.  Partial failures never abort a sweep; failed points are
itemized in the report and the remaining points still run.
"""

from __future__ import annotations

import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import grid as G
from .cellproblem import CellSolution, ResistanceMatrix
from .compressible import ForcingSpec, solve_steady
from .darcy import solve_darcy
from .errors import ParameterError
from .functional import bogovskii_norm_probe, poincare_constant
from .geometry import (DomainSpec, PerforationLattice, ReferenceShape,
                       build_lattice, sigma)
from .grid import GridSpec, Mask, VectorField
from .stokes import SolverTolerances, solve_stokes
from .testfn import audit_norms, build_testfn, h4_pairing


@dataclass
class EpsLadder:
    """Decreasing eps sequence with its physics and resolution policy."""

    eps_values: tuple
    alpha: float
    beta: float = 0.0
    gamma: float = 2.0
    cells_per_eps: int = 16
    min_cells_per_diameter: int = 8
    box: DomainSpec = field(default_factory=lambda: DomainSpec.cube(1.5))
    shape: ReferenceShape = field(
        default_factory=lambda: ReferenceShape.sphere(0.9))
    memory_cells_budget: int = 224 ** 3

    def __post_init__(self):
        vals = tuple(float(e) for e in self.eps_values)
        if any(vals[i + 1] >= vals[i] for i in range(len(vals) - 1)):
            raise ParameterError("eps values must decrease strictly")
        if not (1.0 <= self.alpha <= 3.0):
            raise ParameterError(f"alpha must lie in [1, 3], got {self.alpha}")
        if self.cells_per_eps < 16:
            raise ParameterError("resolution rule requires >= 16 cells per eps")
        if self.min_cells_per_diameter < 8:
            raise ParameterError("resolution rule requires >= 8 cells per "
                                 "particle diameter")
        object.__setattr__(self, "eps_values", vals)

    def resolution(self, eps: float) -> int:
        side = float(self.box.extent[0])
        n = int(round(side * self.cells_per_eps / eps))
        if abs(side * self.cells_per_eps / eps - n) > 1e-9:
            raise ParameterError(
                f"box side {side} with {self.cells_per_eps} cells per eps "
                f"does not give an integer grid at eps={eps}")
        diam_cells = 2.0 * self.shape.bounding_radius * eps ** self.alpha \
            / (eps / self.cells_per_eps)
        if diam_cells < self.min_cells_per_diameter:
            raise ParameterError(
                f"particle diameter resolved by {diam_cells:.1f} < "
                f"{self.min_cells_per_diameter} cells at eps={eps}")
        if n ** 3 > self.memory_cells_budget:
            raise ParameterError(
                f"ladder point eps={eps} needs {n}^3 cells, over the "
                f"memory budget")
        return n

    def beta_threshold(self) -> float:
        return 1.5 * (self.gamma + 1.0) * (self.alpha - 1.0)

    def describe(self) -> dict:
        resolutions = []
        for e in self.eps_values:
            try:
                resolutions.append(self.resolution(e))
            except ParameterError as exc:
                resolutions.append(str(exc))
        return {
            "eps_values": list(self.eps_values),
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "cells_per_eps": self.cells_per_eps,
            "box_side": float(self.box.extent[0]),
            "shape_kind": self.shape.kind,
            "shape_radius": self.shape.bounding_radius,
            "resolutions": resolutions,
            "beta_threshold": self.beta_threshold(),
            "beta_above_threshold": self.beta > self.beta_threshold(),
        }


@dataclass
class RateFit:
    exponent: float
    prefactor: float
    residual: float
    target: float | None = None

    @property
    def deviation(self) -> float | None:
        return None if self.target is None else abs(self.exponent - self.target)

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "prefactor": self.prefactor,
                "residual": self.residual, "target": self.target,
                "deviation": self.deviation}


def fit_rate(points, target: float | None = None) -> RateFit:
    """Log-log least squares of value against eps."""
    pts = [(float(e), float(v)) for e, v in points]
    if len(pts) < 2:
        raise ParameterError("rate fit needs at least two points")
    if any(v <= 0.0 for _, v in pts):
        raise ParameterError("rate fit needs positive values")
    x = np.log([e for e, _ in pts])
    y = np.log([v for _, v in pts])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return RateFit(exponent=float(coef[0]), prefactor=float(np.exp(coef[1])),
                   residual=resid, target=target)


@dataclass
class ConvergenceReport:
    kind: str
    ladder: dict
    points: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    partial: bool = False
    environment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        fits = {k: v.to_dict() if isinstance(v, RateFit) else v
                for k, v in self.fits.items()}
        return {"kind": self.kind, "ladder": self.ladder,
                "points": self.points, "fits": fits,
                "failures": self.failures, "partial": self.partial,
                "environment": self.environment}


def _run_points(ladder: EpsLadder, worker, workers: int = 1):
    """Run one callable per ladder point, never aborting the sweep."""
    results = {}
    failures = []

    def run_one(eps):
        try:
            return eps, worker(eps), None
        except Exception as exc:  # noqa: BLE001 - itemized in the report
            return eps, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(run_one, ladder.eps_values))
    else:
        out = [run_one(e) for e in ladder.eps_values]
    for eps, value, err in out:
        if err is None:
            results[eps] = value
        else:
            failures.append({"eps": eps, "error": err})
    return results, failures


def collar_excluded_error(u: VectorField, u_ref: VectorField, grid: GridSpec,
                          eps: float) -> tuple[float, float]:
    """Relative and absolute L2 gap away from a boundary collar.

    The collar width is max(2 eps, 4 h): the limit law loses the no-slip
    trace at the outer boundary, so comparisons exclude it.
    """
    w = max(2.0 * eps, 4.0 * grid.h)
    lo = np.asarray(grid.box.box_min)
    hi = np.asarray(grid.box.box_max)
    num = 0.0
    den = 0.0
    for fam in range(3):
        coords = [grid.cell_centers(d) for d in range(3)]
        coords[fam] = grid.face_coords(fam)
        x = coords[0][:, None, None]
        y = coords[1][None, :, None]
        z = coords[2][None, None, :]
        inside = ((x > lo[0] + w) & (x < hi[0] - w)
                  & (y > lo[1] + w) & (y < hi[1] - w)
                  & (z > lo[2] + w) & (z < hi[2] - w)) \
            * np.ones(grid.face_shape(fam), dtype=bool)
        d = (u[fam] - u_ref[fam])[inside]
        num += float(np.sum(d ** 2))
        den += float(np.sum(u_ref[fam][inside] ** 2))
    h3 = grid.h ** 3
    return (math.sqrt(num / den) if den > 0.0 else math.inf,
            math.sqrt(num * h3))


def _point_tolerances(scale: float) -> SolverTolerances:
    return SolverTolerances(momentum_tol=1e-5 * scale,
                            divergence_tol=3e-5 * scale, max_outer=600)


def run_darcy_convergence(ladder: EpsLadder, forcing: ForcingSpec,
                          resistance: ResistanceMatrix | np.ndarray,
                          mode: str = "incompressible", m0: float | None = None,
                          workers: int = 1, theta: float = 1.0
                          ) -> ConvergenceReport:
    """Rescaled velocity against the Darcy target along the eps ladder."""
    if mode not in ("incompressible", "compressible"):
        raise ParameterError(f"unknown mode {mode!r}")
    report = ConvergenceReport(kind=f"darcy-convergence-{mode}",
                               ladder=ladder.describe())
    Rm = resistance.R if isinstance(resistance, ResistanceMatrix) \
        else np.asarray(resistance)
    box_volume = ladder.box.volume
    mass = m0 if m0 is not None else box_volume
    rho0 = mass / box_volume

    def point(eps):
        t0 = time.perf_counter()
        n = ladder.resolution(eps)
        lat = build_lattice(ladder.box, eps, ladder.alpha, ladder.shape)
        grid = GridSpec.cover(ladder.box, n)
        mask = Mask.from_lattice(lat, grid)
        s = sigma(eps, ladder.alpha)
        tol = _point_tolerances(s * s)
        rec = {"eps": eps, "sigma": s, "resolution": n, "count": lat.count}
        if mode == "incompressible":
            rhs = VectorField.zeros(grid)
            ff = forcing.f.sample(grid)
            gf = forcing.g.sample(grid)
            for fam in range(3):
                rhs[fam][...] = rho0 * ff[fam] + gf[fam]
            sol = solve_stokes(lat, grid, rhs, tol, mask=mask)
            u = sol.u
            rec["iterations"] = sol.iterations
        else:
            state = solve_steady(lat, grid, forcing, ladder.gamma, ladder.beta,
                                 mass, tol, mask=mask, theta=theta)
            u = state.u
            rec["iterations"] = state.iterations
            rho_dev = G.norm(state.rho - G.fluid_mean(state.rho, mask)
                             * mask.cell, 2.0 * ladder.gamma, mask)
            rec["density_deviation"] = rho_dev
            rec["density_deviation_scaled"] = rho_dev * eps ** (
                -ladder.beta / ladder.gamma)
            rec["p_eps_l2"] = G.norm(state.p_eps, 2, mask)
            rec["energy_form"] = state.energy_form
            rec["energy_rhs"] = state.energy_rhs
            rec["energy_pressure_work"] = state.energy_pressure_work
            rec["mass"] = grid.h ** 3 * float(np.sum(state.rho[mask.cell]))
        dtol = SolverTolerances(momentum_tol=1e-10, divergence_tol=1e-12,
                                max_outer=800)
        dar = solve_darcy(grid, Rm, rho0, forcing, dtol)
        rescaled = VectorField(*(u[f] / (s * s) for f in range(3)))
        target_norm = G.norm(dar.u, 2, Mask.all_fluid(grid))
        if target_norm < 1e-14:
            _, abs_err = collar_excluded_error(rescaled, dar.u, grid, eps)
            rec["u_error"] = abs_err
            rec["error_kind"] = "absolute"
        else:
            rel, _ = collar_excluded_error(rescaled, dar.u, grid, eps)
            rec["u_error"] = rel
            rec["error_kind"] = "relative"
        rec["u_rescaled_l2"] = G.norm(rescaled, 2, mask)
        rec["wall_time"] = time.perf_counter() - t0
        return rec

    results, failures = _run_points(ladder, point, workers)
    report.failures = failures
    report.partial = bool(failures)
    for eps in ladder.eps_values:
        if eps in results:
            report.points.append(results[eps])
    errs = [(p["eps"], p["u_error"]) for p in report.points
            if p["u_error"] > 0.0]
    if len(errs) >= 2:
        report.fits["u_error"] = fit_rate(errs)
        vals = [v for _, v in errs]
        report.fits["u_error_monotone"] = all(
            vals[i + 1] < vals[i] for i in range(len(vals) - 1))
        report.fits["u_error_total_decrease"] = (vals[0] - vals[-1]) / vals[0]
    return report


def run_scaling_sweeps(ladder: EpsLadder, workers: int = 1,
                       probes: int = 3, power_steps: int = 1,
                       seed: int = 1234) -> ConvergenceReport:
    """Poincare constant and divergence right-inverse norm along the ladder."""
    report = ConvergenceReport(kind="scaling-sweeps", ladder=ladder.describe())

    def point(eps):
        t0 = time.perf_counter()
        n = ladder.resolution(eps)
        lat = build_lattice(ladder.box, eps, ladder.alpha, ladder.shape)
        grid = GridSpec.cover(ladder.box, n)
        mask = Mask.from_lattice(lat, grid)
        est = poincare_constant(lat, grid, mask=mask)
        rec = {
            "eps": eps, "sigma": sigma(eps, ladder.alpha), "resolution": n,
            "count": lat.count,
            "lambda_min": est.lambda_min,
            "poincare_constant": est.constant,
            "poincare_iterations": est.iterations,
        }
        if probes > 0:
            scale = math.sqrt(mask.fluid_volume)
            tol = SolverTolerances(momentum_tol=1e-4 * scale,
                                   divergence_tol=1e-8 * scale, max_outer=600)
            bnorm, ratios, residuals = bogovskii_norm_probe(
                lat, grid, tol, mask=mask, probes=probes,
                power_steps=power_steps, seed=seed)
            rec["bogovskii_norm"] = bnorm
            rec["bogovskii_ratios"] = ratios
            rec["bogovskii_max_rel_residual"] = max(residuals)
        rec["wall_time"] = time.perf_counter() - t0
        return rec

    results, failures = _run_points(ladder, point, workers)
    report.failures = failures
    report.partial = bool(failures)
    for eps in ladder.eps_values:
        if eps in results:
            report.points.append(results[eps])
    if len(report.points) >= 2:
        report.fits["poincare"] = fit_rate(
            [(p["eps"], p["poincare_constant"]) for p in report.points],
            target=(3.0 - ladder.alpha) / 2.0)
        if all("bogovskii_norm" in p for p in report.points):
            report.fits["bogovskii"] = fit_rate(
                [(p["eps"], p["bogovskii_norm"]) for p in report.points],
                target=(ladder.alpha - 3.0) / 2.0)
    return report


def run_testfn_audit(ladder: EpsLadder, cell_solution: CellSolution,
                     direction: int = 0, p_list=(2.0, 4.0),
                     workers: int = 1) -> ConvergenceReport:
    """Norm scalings of the oscillating test functions along the ladder."""
    report = ConvergenceReport(kind="testfn-audit", ladder=ladder.describe())

    def point(eps):
        t0 = time.perf_counter()
        n = ladder.resolution(eps)
        lat = build_lattice(ladder.box, eps, ladder.alpha, ladder.shape)
        grid = GridSpec.cover(ladder.box, n)
        tf = build_testfn(lat, grid, direction, cell_solution)
        rec = audit_norms(tf, list(p_list))
        rec["resolution"] = n
        rec["wall_time"] = time.perf_counter() - t0
        return rec

    results, failures = _run_points(ladder, point, workers)
    report.failures = failures
    report.partial = bool(failures)
    for eps in ladder.eps_values:
        if eps in results:
            report.points.append(results[eps])
    a = ladder.alpha
    if len(report.points) >= 2:
        for p in p_list:
            tgt = -a + 3.0 * (a - 1.0) / p
            for key, target in (("grad_w_C_norm", tgt), ("q_C_norm", tgt),
                                ("grad_q_C_norm", -2 * a + 3 * (a - 1) / p),
                                ("grad_w_annulus_norm", a - 2.0),
                                ("q_annulus_norm", a - 2.0),
                                ("grad_w_norm", None), ("q_norm", None)):
                pts = [(r["eps"], r["p"][p][key]) for r in report.points]
                report.fits[f"{key}_p{p:g}"] = fit_rate(pts, target=target)
        h3 = [r["sigma"] * (r["p"][2.0]["grad_w_norm"]
                            + r["p"][2.0]["q_norm"])
              for r in report.points if 2.0 in r["p"]]
        if h3:
            report.fits["h3_bound_max_over_min"] = max(h3) / min(h3)
        report.fits["w_minus_e_l2"] = [r["w_minus_e_l2"]
                                       for r in report.points]
    return report


def run_h4_experiment(ladder: EpsLadder, cell_solution: CellSolution,
                      resistance: ResistanceMatrix | np.ndarray,
                      k: int = 0, j: int = 0, workers: int = 1
                      ) -> ConvergenceReport:
    """Pairing of sigma^2 (grad q - lap w) with phi w_j along the ladder.

    The gap to R_kj int(phi) should shrink as eps decreases; phi is a smooth
    compactly supported bump.
    """
    report = ConvergenceReport(kind="h4-experiment", ladder=ladder.describe())
    Rm = resistance.R if isinstance(resistance, ResistanceMatrix) \
        else np.asarray(resistance)

    def bump(grid: GridSpec) -> np.ndarray:
        lo = np.asarray(grid.box.box_min)
        ext = grid.box.extent

        def phi(x, y, z):
            xn = (x - lo[0]) / ext[0]
            yn = (y - lo[1]) / ext[1]
            zn = (z - lo[2]) / ext[2]
            return (np.sin(np.pi * xn) * np.sin(np.pi * yn)
                    * np.sin(np.pi * zn)) ** 2

        return G.sample_on_cells(grid, phi)

    def point(eps):
        t0 = time.perf_counter()
        n = ladder.resolution(eps)
        lat = build_lattice(ladder.box, eps, ladder.alpha, ladder.shape)
        grid = GridSpec.cover(ladder.box, n)
        mask = Mask.from_lattice(lat, grid)
        tf_k = build_testfn(lat, grid, k, cell_solution, mask=mask)
        tf_j = tf_k if j == k else build_testfn(lat, grid, j, cell_solution,
                                                mask=mask)
        phi = bump(grid)
        nu = VectorField(*(tf_j.w[f] * mask.faces[f] for f in range(3)))
        pairing = h4_pairing(tf_k, phi, nu, eps, ladder.alpha)
        phi_int = grid.h ** 3 * float(np.sum(phi))
        target = Rm[k, j] * phi_int
        return {
            "eps": eps, "resolution": n, "pairing": pairing,
            "target": target,
            "gap": abs(pairing - target) / abs(target),
            "wall_time": time.perf_counter() - t0,
        }

    results, failures = _run_points(ladder, point, workers)
    report.failures = failures
    report.partial = bool(failures)
    for eps in ladder.eps_values:
        if eps in results:
            report.points.append(results[eps])
    gaps = [p["gap"] for p in report.points]
    if gaps:
        report.fits["gap_final"] = gaps[-1]
        report.fits["gap_monotone"] = all(
            gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1))
    return report
