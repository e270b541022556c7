"""Command line entry point: config ingestion, dispatch, persistence.

Single binary with subcommands; every run validates its configuration
first, executes, and persists reports atomically (per-point files as the
sweep progresses, then the assembled report).  Exit codes: 0 success or
partial sweep, 2 configuration error, 3 numerical failure, 4 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__
from .cellproblem import ResistanceMatrix, compute_resistance
from .compressible import Forcing, ForcingSpec
from .errors import ConfigError
from .geometry import DomainSpec, ReferenceShape
from .grid import GridSpec, Mask
from .harness import (ConvergenceReport, EpsLadder, run_darcy_convergence,
                      run_h4_experiment, run_scaling_sweeps, run_testfn_audit)
from .reports import (atomic_write_json, atomic_write_text,
                      environment_metadata, fits_footer, points_table)
from .stokes import SolverTolerances

_SCHEMA = {
    "geometry": {"box_side", "alpha", "shape", "radius", "semi_axes",
                 "exponent", "sdf_path"},
    "physics": {"gamma", "beta", "m0", "rho0",
                "forcing_f", "f_amplitude", "forcing_g", "g_amplitude"},
    "ladder": {"eps", "cells_per_eps", "truncations", "resolutions",
               "mode", "direction", "cell_L", "cell_resolution"},
    "solver": {"momentum_tol", "divergence_tol", "max_outer", "method",
               "theta", "probes", "power_steps"},
    "output": {"directory", "cache_directory"},
}

_DEFAULTS = {
    "geometry": {"box_side": "1.5", "alpha": "1.5", "shape": "sphere",
                 "radius": "0.9", "semi_axes": "0.5,0.5,0.5",
                 "exponent": "4.0", "sdf_path": ""},
    "physics": {"gamma": "2.0", "beta": "1.3", "m0": "", "rho0": "1.0",
                "forcing_f": "zero", "f_amplitude": "0,0,0",
                "forcing_g": "vortex", "g_amplitude": "1,0,0"},
    "ladder": {"eps": "0.25,0.16666666666666666,0.125", "cells_per_eps": "16",
               "truncations": "8,16,32", "resolutions": "64,128,256",
               "mode": "incompressible", "direction": "0",
               "cell_L": "8", "cell_resolution": "64"},
    "solver": {"momentum_tol": "1e-5", "divergence_tol": "1e-7",
               "max_outer": "600", "method": "minres", "theta": "1.0",
               "probes": "3", "power_steps": "1"},
    "output": {"directory": "out", "cache_directory": ".darcylab-cache"},
}


class RunConfig:
    """Validated, fully resolved run configuration."""

    def __init__(self, parser: configparser.ConfigParser):
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key in parser[section]:
                if key not in _SCHEMA[section]:
                    raise ConfigError(
                        f"unknown key {key!r} in section [{section}]")
        merged = {}
        for section, defaults in _DEFAULTS.items():
            merged[section] = dict(defaults)
            if parser.has_section(section):
                merged[section].update(parser[section])
        self.raw = merged
        g = merged["geometry"]
        self.box_side = float(g["box_side"])
        if self.box_side <= 0:
            raise ConfigError("box_side must be positive")
        self.alpha = float(g["alpha"])
        if not (1.0 <= self.alpha <= 3.0):
            raise ConfigError(f"alpha must lie in [1, 3], got {self.alpha}")
        self.shape = self._parse_shape(g)
        p = merged["physics"]
        self.gamma = float(p["gamma"])
        if self.gamma < 1.0:
            raise ConfigError(f"gamma must be >= 1, got {self.gamma}")
        self.beta = float(p["beta"])
        self.rho0 = float(p["rho0"])
        self.m0 = float(p["m0"]) if p["m0"] else None
        self.forcing = ForcingSpec(
            f=Forcing(p["forcing_f"], self._vec(p["f_amplitude"])),
            g=Forcing(p["forcing_g"], self._vec(p["g_amplitude"])))
        if self.forcing.f.kind not in ("zero", "constant", "vortex", "gradient"):
            raise ConfigError(f"unknown forcing preset {self.forcing.f.kind!r}")
        if self.forcing.g.kind not in ("zero", "constant", "vortex", "gradient"):
            raise ConfigError(f"unknown forcing preset {self.forcing.g.kind!r}")
        l = merged["ladder"]
        self.eps_values = tuple(float(t) for t in l["eps"].split(","))
        for e in self.eps_values:
            if not (0.0 < e <= 1.0):
                raise ConfigError(f"eps must lie in (0, 1], got {e}")
        self.cells_per_eps = int(l["cells_per_eps"])
        self.truncations = [float(t) for t in l["truncations"].split(",")]
        self.resolutions = [int(t) for t in l["resolutions"].split(",")]
        if len(self.truncations) != len(self.resolutions):
            raise ConfigError("truncations and resolutions differ in length")
        self.mode = l["mode"]
        if self.mode not in ("incompressible", "compressible"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        self.direction = int(l["direction"])
        self.cell_L = float(l["cell_L"])
        self.cell_resolution = int(l["cell_resolution"])
        s = merged["solver"]
        self.tol = SolverTolerances(
            momentum_tol=float(s["momentum_tol"]),
            divergence_tol=float(s["divergence_tol"]),
            max_outer=int(s["max_outer"]),
            method=s["method"])
        self.theta = float(s["theta"])
        self.probes = int(s["probes"])
        self.power_steps = int(s["power_steps"])
        o = merged["output"]
        self.output_dir = o["directory"]
        self.cache_dir = o["cache_directory"]

    @staticmethod
    def _vec(text: str):
        parts = [float(t) for t in text.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"amplitude needs 3 components, got {text!r}")
        return tuple(parts)

    def _parse_shape(self, g) -> ReferenceShape:
        kind = g["shape"]
        if kind == "sphere":
            return ReferenceShape.sphere(float(g["radius"]))
        if kind == "superellipsoid":
            axes = self._vec(g["semi_axes"])
            return ReferenceShape.superellipsoid(axes, float(g["exponent"]))
        if kind == "sdf":
            if not g["sdf_path"]:
                raise ConfigError("sdf shape requires sdf_path")
            return ReferenceShape.load_sdf(g["sdf_path"])
        raise ConfigError(f"unknown shape kind {kind!r}")

    def ladder(self) -> EpsLadder:
        return EpsLadder(eps_values=self.eps_values, alpha=self.alpha,
                         beta=self.beta, gamma=self.gamma,
                         cells_per_eps=self.cells_per_eps,
                         box=DomainSpec.cube(self.box_side), shape=self.shape)

    def echo(self) -> dict:
        return {section: dict(vals) for section, vals in self.raw.items()}


def _load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return RunConfig(parser)


def _shape_cache_key(cfg: RunConfig) -> str:
    blob = repr((cfg.shape.kind, cfg.shape.bounding_radius, cfg.shape.radius,
                 cfg.shape.semi_axes, cfg.shape.exponent,
                 None if cfg.shape.sdf_values is None
                 else hashlib.sha256(cfg.shape.sdf_values.tobytes()).hexdigest(),
                 tuple(cfg.truncations), tuple(cfg.resolutions),
                 __version__)).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_report(outdir: str, name: str, report: ConvergenceReport | dict,
                  cfg: RunConfig, quiet: bool) -> None:
    payload = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    payload["config"] = cfg.echo()
    payload["environment"] = environment_metadata()
    atomic_write_json(os.path.join(outdir, f"{name}.json"), payload)
    pts = payload.get("points", [])
    if pts:
        table = points_table(pts)
        if payload.get("fits"):
            table += fits_footer(payload["fits"])
        atomic_write_text(os.path.join(outdir, f"{name}.csv"), table)
    if not quiet:
        print(f"wrote {os.path.join(outdir, name)}.json", flush=True)


def _point_writer(outdir: str, quiet: bool):
    os.makedirs(os.path.join(outdir, "points"), exist_ok=True)
    counter = [0]

    def write(record: dict):
        path = os.path.join(outdir, "points", f"point_{counter[0]:03d}.json")
        atomic_write_json(path, record)
        counter[0] += 1
        if not quiet:
            print(f"  point persisted: {path}", flush=True)

    return write


def cmd_resistance(cfg: RunConfig, args) -> int:
    os.makedirs(cfg.cache_dir, exist_ok=True)
    key = _shape_cache_key(cfg)
    cache_path = os.path.join(cfg.cache_dir, f"resistance-{key}.json")
    if os.path.exists(cache_path):
        import json

        with open(cache_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if not args.quiet:
            print(f"cache hit: {cache_path}", flush=True)
    else:
        R, details = compute_resistance(cfg.shape, cfg.truncations,
                                        cfg.resolutions, cfg.tol)
        payload = {
            "shape": {"kind": cfg.shape.kind,
                      "bounding_radius": cfg.shape.bounding_radius},
            "ladder": [{"L": L, "Rbar_L": m.tolist()} for L, m in R.ladder],
            "Rbar": R.Rbar.tolist(),
            "R": R.R.tolist(),
            "symmetry_defect": R.symmetry_defect,
            "spd_min_eigenvalue": R.min_eigenvalue,
            "cell_volume_normalization": 8.0,
            "details": details,
        }
        atomic_write_json(cache_path, payload)
    _write_report(args.output, "resistance", payload, cfg, args.quiet)
    return 0


def load_cached_resistance(cfg: RunConfig):
    import json

    key = _shape_cache_key(cfg)
    cache_path = os.path.join(cfg.cache_dir, f"resistance-{key}.json")
    if os.path.exists(cache_path):
        with open(cache_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return np.asarray(payload["R"])
    # fall back to the isotropic unit-sphere value scaled by linearity
    return (6.0 * np.pi * cfg.shape.bounding_radius / 8.0) * np.eye(3)


def cmd_sweep(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    report = run_scaling_sweeps(ladder, workers=args.workers,
                                probes=cfg.probes,
                                power_steps=cfg.power_steps, seed=args.seed)
    _persist_points(report, args)
    _write_report(args.output, "sweep", report, cfg, args.quiet)
    return 0


def cmd_poincare(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    report = run_scaling_sweeps(ladder, workers=args.workers, probes=0,
                                power_steps=0, seed=args.seed)
    _persist_points(report, args)
    _write_report(args.output, "poincare", report, cfg, args.quiet)
    return 0


def cmd_bogovskii(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    report = run_scaling_sweeps(ladder, workers=args.workers,
                                probes=max(cfg.probes, 1),
                                power_steps=cfg.power_steps, seed=args.seed)
    _persist_points(report, args)
    _write_report(args.output, "bogovskii", report, cfg, args.quiet)
    return 0


def _cell_solution(cfg: RunConfig):
    from .cellproblem import solve_cell_problem

    return solve_cell_problem(cfg.shape, cfg.direction, cfg.cell_L,
                              cfg.cell_resolution)


def cmd_testfn(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    cell = _cell_solution(cfg)
    report = run_testfn_audit(ladder, cell, direction=cfg.direction,
                              workers=args.workers)
    _persist_points(report, args)
    _write_report(args.output, "testfn", report, cfg, args.quiet)
    return 0


def cmd_compressible(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    R = load_cached_resistance(cfg)
    report = run_darcy_convergence(ladder, cfg.forcing, R,
                                   mode="compressible", m0=cfg.m0,
                                   workers=args.workers, theta=cfg.theta)
    _persist_points(report, args)
    _write_report(args.output, "compressible", report, cfg, args.quiet)
    return 0


def cmd_darcy(cfg: RunConfig, args) -> int:
    from .darcy import solve_darcy

    R = load_cached_resistance(cfg)
    n = max(8, int(round(cfg.box_side * cfg.cells_per_eps
                         / cfg.eps_values[-1])))
    grid = GridSpec.cover(DomainSpec.cube(cfg.box_side), n)
    sol = solve_darcy(grid, R, cfg.rho0, cfg.forcing, cfg.tol)
    mask = Mask.all_fluid(grid)
    from . import grid as Gmod

    payload = {
        "kind": "darcy-limit-solve",
        "points": [{
            "resolution": n,
            "u_l2": Gmod.norm(sol.u, 2, mask),
            "p_l2": Gmod.norm(sol.p, 2, mask),
            "divergence_residual": sol.divergence_residual,
            "iterations": sol.iterations,
            "R": sol.R_used.tolist(),
            "rho0": sol.rho0,
        }],
    }
    _write_report(args.output, "darcy", payload, cfg, args.quiet)
    return 0


def cmd_convergence(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    R = load_cached_resistance(cfg)
    report = run_darcy_convergence(ladder, cfg.forcing, R, mode=cfg.mode,
                                   m0=cfg.m0, workers=args.workers,
                                   theta=cfg.theta)
    _persist_points(report, args)
    _write_report(args.output, "convergence", report, cfg, args.quiet)
    return 0


def cmd_h4(cfg: RunConfig, args) -> int:
    ladder = cfg.ladder()
    cell = _cell_solution(cfg)
    R = load_cached_resistance(cfg)
    report = run_h4_experiment(ladder, cell, R, k=cfg.direction,
                               j=cfg.direction, workers=args.workers)
    _persist_points(report, args)
    _write_report(args.output, "h4", report, cfg, args.quiet)
    return 0


def _persist_points(report: ConvergenceReport, args) -> None:
    writer = _point_writer(args.output, args.quiet)
    for p in report.points:
        writer(p)


_COMMANDS = {
    "resistance": cmd_resistance,
    "sweep": cmd_sweep,
    "poincare": cmd_poincare,
    "bogovskii": cmd_bogovskii,
    "testfn": cmd_testfn,
    "compressible": cmd_compressible,
    "darcy": cmd_darcy,
    "convergence": cmd_convergence,
    "h4": cmd_h4,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="darcylab",
        description="perforated-domain homogenization laboratory")
    ap.add_argument("command", choices=sorted(_COMMANDS))
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--output", default=None, help="output directory")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 4 if exc.code not in (0, None) else 0
    try:
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # malformed INI and friends
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if args.output is None:
        args.output = cfg.output_dir
    os.makedirs(args.output, exist_ok=True)
    t0 = time.perf_counter()
    try:
        code = _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3
    if not args.quiet:
        print(f"done in {time.perf_counter() - t0:.1f}s", flush=True)
    return code


if __name__ == "__main__":
    sys.exit(main())
