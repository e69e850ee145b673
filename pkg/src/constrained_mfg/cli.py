"""Command line entry point: ``cmfg <subcommand> --config cfg.json [--out DIR]``.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence
(results are still written, with flags).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, ConstrainedMFGError, NonConvergence
from .finite_mfg import equilibrium_fixed_point, write_path_table
from .grid import GridMeasure
from .hjsolver import (
    LaxOleinikOperator,
    backward_sweep,
    CouplingCosts,
    ergodic_solve,
    load_checkpoint,
    max_adjacent_slope,
    semiconcavity_ratios,
)
from .lab import (
    ExperimentConfig,
    _json_default,
    interpolation_inequality_check,
    load_config,
    run_longtime_experiment,
    solve_stationary,
    write_report,
)
from .library import build_measure
from .mather import mather_measure_check, mather_set
from .model import NoCoupling

log = logging.getLogger("constrained_mfg")

SUBCOMMANDS = ("ergodic", "hj", "mfg-ergodic", "mfg-horizon", "longtime", "checks")


def _write_json(path: Path, data: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=_json_default) + "\n")


def _write_field(path: Path, u: np.ndarray):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(u, dtype="<f8").tobytes())


def cmd_ergodic(cfg: ExperimentConfig, out: Path, resume: bool) -> int:
    grid, model, _ = cfg.build()
    dt = cfg.dt_for(grid)
    ckpt = out / "ergodic.ckpt"
    u0, start = None, 0
    if resume and ckpt.exists():
        u0, shape, start, _ = load_checkpoint(ckpt)
        if shape != grid.shape:
            raise ConfigError(f"checkpoint grid {shape} does not match {grid.shape}", "grid.nodes")
    status = 0
    try:
        sol = ergodic_solve(
            model, grid, dt, tol=cfg.solver.ergodic_tol, max_iter=cfg.solver.ergodic_max_iter,
            speed_cap=cfg.solver.speed_cap, u0=u0, warm_start=u0 is None and cfg.solver.ergodic_warm_start,
            checkpoint=ckpt, checkpoint_every=1000, start_iteration=start,
        )
    except NonConvergence as exc:
        sol, status = exc.result, 2
    data = mather_set(model, grid)
    _write_field(out / "ergodic_u.f64", sol.u)
    _write_json(out / "ergodic.json", {
        "critical_value": sol.critical_value,
        "static_critical_value": data.critical_value,
        "mather_points": data.points.tolist(),
        "residual": sol.residual,
        "iterations": sol.iterations,
        "max_adjacent_slope": max_adjacent_slope(sol.u, grid),
        "h": grid.h,
        "dt": dt,
        "converged": status == 0,
    })
    return status


def cmd_hj(cfg: ExperimentConfig, out: Path, resume: bool) -> int:
    """Uncoupled finite-horizon value slices u^T(t, .) for each horizon, u_f = 0 (plus offset)."""
    grid, model, _ = cfg.build()
    dt = cfg.dt_for(grid)
    op = LaxOleinikOperator(model, grid, dt, cfg.solver.speed_cap)
    summary = []
    for T in cfg.horizons:
        N = int(round(T / dt))
        u_f = np.full(grid.size, float(cfg.terminal.get("offset", 0.0)))
        U, _ = backward_sweep(op, CouplingCosts(op, NoCoupling(), np.zeros((N + 1, grid.size))), u_f, N)
        _write_field(out / f"hj_T{T:g}.values.f64", U)
        summary.append({"T": T, "steps": N, "u0_min": float(U[0].min()), "u0_max": float(U[0].max())})
    _write_json(out / "hj.json", {"nodes": grid.size, "dt": dt, "layout": "t-major, little-endian float64", "horizons": summary})
    return 0


def cmd_mfg_ergodic(cfg: ExperimentConfig, out: Path, resume: bool) -> int:
    sol = solve_stationary(cfg)
    _write_field(out / "u_bar.f64", sol.u_bar)
    _write_field(out / "m_bar.f64", sol.m_bar.weights)
    cert = dict(sol.certificate)
    cert["converged"] = sol.converged
    _write_json(out / "mfg_ergodic.json", cert)
    return 0 if sol.converged else 2


def cmd_mfg_horizon(cfg: ExperimentConfig, out: Path, resume: bool) -> int:
    grid, model, coupling = cfg.build()
    dt = cfg.dt_for(grid)
    op = LaxOleinikOperator(model, grid, dt, cfg.solver.speed_cap)
    stationary = cfg.initial["kind"] == "stationary" or cfg.terminal.get("kind") == "ergodic"
    erg = solve_stationary(cfg, grid, model, coupling) if stationary else None
    m0 = erg.m_bar if cfg.initial["kind"] == "stationary" else build_measure(cfg.initial, grid, np.random.default_rng(cfg.seed))
    u_f = (erg.u_bar if cfg.terminal.get("kind") == "ergodic" else np.zeros(grid.size)) + cfg.terminal.get("offset", 0.0)
    status, runs = 0, []
    for T in cfg.horizons:
        try:
            path = equilibrium_fixed_point(
                model, coupling, GridMeasure.from_weights(grid, m0.weights), u_f, T, dt,
                tol_expl=cfg.solver.tol_expl, max_outer=cfg.solver.max_outer,
                averaging=cfg.solver.averaging, operator=op,
            )
        except NonConvergence as exc:
            path, status = exc.result, 2
        write_path_table(path, out / "paths", f"T{T:g}")
        runs.append({"T": T, "exploitability": path.exploitability, "converged": path.converged})
    _write_json(out / "mfg_horizon.json", {"runs": runs})
    return status


def cmd_longtime(cfg: ExperimentConfig, out: Path, resume: bool, threads: int = 1) -> int:
    report = run_longtime_experiment(cfg, out_dir=out, resume=resume, threads=threads)
    write_report(report, cfg, out)
    for r in report.rows:
        log.info("T=%g E_u=%.4g E_F=%.4g expl=%.3g%s", r.T, r.E_u, r.E_F, r.exploitability, "" if r.converged else " (not converged)")
    return 0 if report.ok else 2


def cmd_checks(cfg: ExperimentConfig, out: Path, resume: bool) -> int:
    """Mather set, regularity and interpolation checks for the configured model."""
    grid, model, coupling = cfg.build()
    dt = cfg.dt_for(grid)
    status = 0
    try:
        sol = ergodic_solve(model, grid, dt, tol=cfg.solver.ergodic_tol, max_iter=cfg.solver.ergodic_max_iter, speed_cap=cfg.solver.speed_cap)
    except NonConvergence as exc:
        sol, status = exc.result, 2
    data = mather_set(model, grid)
    mcheck = mather_measure_check(data, sol, model)
    ratios = semiconcavity_ratios(sol.u, grid, [1, 2, 4, 8])
    report = {
        "critical_value": sol.critical_value,
        "static_critical_value": data.critical_value,
        "critical_value_gap": abs(sol.critical_value - data.critical_value),
        "critical_value_tolerance": 3 * (grid.h + dt),
        "fixed_point_residual": sol.residual,
        "max_adjacent_slope": max_adjacent_slope(sol.u, grid),
        "semiconcavity_ratios": {str(k): v for k, v in ratios.items()},
        "mather": mcheck,
    }
    if not coupling.is_zero:
        rng = np.random.default_rng(cfg.seed)
        samples = []
        for _ in range(8):
            m1 = build_measure({"kind": "random", "atoms": 5}, grid, rng)
            m2 = build_measure({"kind": "random", "atoms": 5}, grid, rng)
            samples.append(coupling.field(grid.points, m1) - coupling.field(grid.points, m2))
        worst, C = interpolation_inequality_check(samples, grid, 2 * coupling.sup_bound(grid.dim), 2 * coupling.spatial_lipschitz)
        report["interpolation"] = {"worst_ratio": worst, "constant": C, "ok": worst <= C}
    _write_json(out / "checks.json", report)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmfg", description="Constrained MFG experiments.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (default: output.directory of the config)")
    p.add_argument("--resume", action="store_true", help="reuse finished horizons / checkpoints in --out")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="horizons solved concurrently")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    handlers = {
        "ergodic": cmd_ergodic,
        "hj": cmd_hj,
        "mfg-ergodic": cmd_mfg_ergodic,
        "mfg-horizon": cmd_mfg_horizon,
        "checks": cmd_checks,
    }
    try:
        if args.command == "longtime":
            code = cmd_longtime(cfg, out, args.resume, max(1, args.threads))
        else:
            code = handlers[args.command](cfg, out, args.resume)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ConstrainedMFGError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2
    if code == 2:
        print("solver did not converge; results written with flags", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
