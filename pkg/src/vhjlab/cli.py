"""Command-line orchestration.

Subcommands: calibrate, solve, scenario, bisect, mc-check, audit. Every run
writes a resolved manifest (all tolerances materialized), its CSV artifacts,
and a run index listing every file. Exit codes: 0 success, 2 scenario
mismatch or starved budget, 3 numerical failure, 64 usage error.

Initial data mini-language for --init:
    bump:eps=0.1,scale=2.0        scaled bump at distance eps
    multibump:sigma=1-1           undeformed plan for a behavior sequence
    scaled_steady:a=1,scale=0.9   scaled regular steady state
    csv:path/to/profile.csv       columns x,u sampled onto the grid
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from . import runio
from .analysis import classify, zero_number_audit
from .bumps import BumpSpec, ConstructionError, make_bump
from .calibration import CalibrationConstants, CalibrationError, calibrate, schedule_for_slope
from .control import ControlRun, Policy, pde_value, simulate_gain
from .core import Params, regular_steady
from .grid import Grading, make_grid
from .multibump import PlanError, plan_multibump
from .search import (
    BudgetExhausted,
    ObjectiveWindow,
    SearchError,
    SolveBudget,
    bisect_critical,
    run_scenario,
    scenario_config,
)
from .solver import SolveConfig, SolverError, viscosity_solve

EXIT_OK = 0
EXIT_MISMATCH = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64


class UsageError(RuntimeError):
    pass


def _parse_kv(spec: str) -> dict:
    out = {}
    if spec:
        for item in spec.split(","):
            if "=" not in item:
                raise UsageError(f"malformed option {item!r}: expected key=value")
            k, v = item.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def parse_init(spec: str, params: Params, grid, calib: Optional[CalibrationConstants]):
    """Materialize the --init mini-language onto the grid."""
    if ":" not in spec:
        raise UsageError(f"initial data spec {spec!r} needs the form kind:options")
    kind, rest = spec.split(":", 1)
    if kind == "bump":
        opts = _parse_kv(rest)
        if "eps" not in opts:
            raise UsageError("bump initial data needs eps=<scale>")
        eps = float(opts["eps"])
        scale = float(opts.get("scale", 1.0))
        amp = float(opts.get("amplitude", 1.7 * params.c_p))
        bump = make_bump(BumpSpec(epsilon=eps, amplitude=amp), params)
        return grid.sample(lambda x: scale * bump(x)), {"eps": eps, "scale": scale}
    if kind == "multibump":
        opts = _parse_kv(rest)
        if "sigma" not in opts:
            raise UsageError("multibump initial data needs sigma=<d1-d2-...>")
        if calib is None:
            raise UsageError("multibump initial data needs --calibration")
        sigma = tuple(int(v) for v in opts["sigma"].split("-"))
        plan = plan_multibump(sigma, params, calib)
        return grid.sample(plan.base_data()), {"sigma": sigma}
    if kind == "scaled_steady":
        opts = _parse_kv(rest)
        a = float(opts.get("a", 1.0))
        scale = float(opts.get("scale", 0.9))
        taper = float(opts.get("taper", 0.25))

        def data(x):
            y = np.clip((1.0 - np.asarray(x)) / taper, 0.0, 1.0)
            return scale * regular_steady(params, a, x) * y * y * (3.0 - 2.0 * y)

        return grid.sample(data), {"a": a, "scale": scale}
    if kind == "csv":
        data = np.loadtxt(rest, delimiter=",", skiprows=1)
        xs, us = data[:, 0], data[:, 1]
        return grid.sample(lambda x: np.interp(x, xs, us)), {"path": rest}
    raise UsageError(f"unknown initial data kind {kind!r}")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vhjlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="key = value config file; flags override it")
    sub = ap.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--p", type=float, default=3.0, help="equation exponent (> 2)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--grid-n", type=int, default=4097)
        p.add_argument("--calibration", help="calibration manifest from `vhjlab calibrate`")

    p = sub.add_parser("calibrate", help="run the pilot calibration")
    common(p)
    p.add_argument("--eps-ref", type=float, default=0.1)

    p = sub.add_parser("solve", help="solve one initial datum and classify it")
    common(p)
    p.add_argument("--init", required=True)
    p.add_argument("--t-end", type=float)
    p.add_argument("--time-tol", type=float)

    p = sub.add_parser("scenario", help="run a full behavior-sequence scenario")
    common(p)
    p.add_argument("--sigma", required=True, help="comma- or dash-separated sequence, e.g. 1,1")
    p.add_argument("--budget", type=int, default=10**9, help="max PDE sweeps")
    p.add_argument("--tol", type=float, default=1e-3)

    p = sub.add_parser("bisect", help="critical amplitude of a scaled bump family")
    common(p)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--budget", type=int, default=10**9)

    p = sub.add_parser("mc-check", aliases=["mc_check"], help="Monte Carlo control oracle")
    common(p)
    p.add_argument("--init", required=True)
    p.add_argument("--x0", type=float, default=0.1)
    p.add_argument("--horizon", type=float, default=0.01)
    p.add_argument("--n-paths", type=int, default=10000)

    p = sub.add_parser("audit", help="zero-number audit of one initial datum")
    common(p)
    p.add_argument("--init", required=True)
    p.add_argument("--t-end", type=float)
    return ap


def _load_calibration(args, params, grid) -> Optional[CalibrationConstants]:
    if args.calibration:
        return runio.read_calibration(args.calibration)
    return None


def _require_calibration(args, params, grid, writer) -> CalibrationConstants:
    cal = _load_calibration(args, params, grid)
    if cal is None:
        cal = calibrate(params, grid=grid)
        runio.write_calibration(cal, writer.path("calibration.txt"))
    return cal


def _solve_config_for_field(fld, args, t_end, ref_scale) -> SolveConfig:
    # two levels with bottom-level headroom: a heavily truncated bottom level
    # diverges O(1) from the sweep and breaks the discrete ordering check
    slope0 = float(np.max(np.abs(fld.gradient())))
    return SolveConfig(
        k_schedule=schedule_for_slope(slope0, levels=2, headroom=2.5),
        t_end=t_end,
        time_tol=getattr(args, "time_tol", None) or 1e-6,
        lbc_ref_scale=ref_scale,
        mono_tol=0.5e-3,
    )


def _write_run(writer, traj, report=None, manifest_extra=None):
    runio.write_trajectory_csv(traj, writer.path("trajectory.csv"))
    runio.write_snapshots(traj, writer)
    if report is not None:
        runio.write_classification(report, writer)
    sections = runio.config_sections(traj.config)
    sections["run"] = dict(manifest_extra or {})
    sections["convergence"] = dict(traj.converged and traj.convergence or {"converged": traj.converged})
    runio.write_manifest(sections, writer.path("manifest.txt"))


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0,) else 0
    if not args.command:
        ap.print_help()
        return EXIT_USAGE
    try:
        return _dispatch(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, PlanError, CalibrationError, ConstructionError, SearchError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args) -> int:
    params = Params(p=args.p)
    grid = make_grid(args.grid_n)
    writer = runio.RunWriter(args.out)
    pool = ThreadPoolExecutor(max_workers=args.threads) if args.threads > 1 else None
    try:
        if args.command == "calibrate":
            cal = calibrate(params, grid=grid, eps_ref=args.eps_ref)
            runio.write_calibration(cal, writer.path("calibration.txt"))
            runio.write_manifest(
                {"run": {"command": "calibrate", "p": params.p, "seed": args.seed}},
                writer.path("manifest.txt"),
            )
            print(f"calibration written to {args.out}")
            return EXIT_OK

        if args.command == "solve":
            cal = _load_calibration(args, params, grid)
            fld, meta = parse_init(args.init, params, grid, cal)
            eps_meta = float(meta.get("eps", 0.1))
            t_end = args.t_end if args.t_end else 60.0 * eps_meta**2
            cfg = _solve_config_for_field(fld, args, t_end, eps_meta)
            traj = viscosity_solve(fld, cfg, params)
            report = classify(traj, params)
            _write_run(writer, traj, report, {"command": "solve", "init": args.init, "seed": args.seed})
            print(f"labels: {report.labels}; transitions: {len(report.transitions)}")
            return EXIT_OK

        if args.command == "scenario":
            cal = _require_calibration(args, params, grid, writer)
            sigma = tuple(int(v) for v in args.sigma.replace("-", ",").split(","))
            budget = SolveBudget(limit=args.budget)
            try:
                res = run_scenario(sigma, params, cal, grid=grid, tol=args.tol, budget=budget)
            except BudgetExhausted as e:
                runio.write_manifest(
                    {"run": {"command": "scenario", "sigma": sigma, "verdict": "PARTIAL", "error": str(e)}},
                    writer.path("manifest.txt"),
                )
                writer.finalize()
                print("verdict: PARTIAL (budget exhausted)")
                return EXIT_MISMATCH
            runio.write_plan(res.plan, writer)
            _write_run(
                writer, res.trajectory, res.report,
                {
                    "command": "scenario",
                    "sigma": sigma,
                    "Lambda": res.Lambda,
                    "evaluations": res.evaluations,
                    "tol": args.tol,
                    "seed": args.seed,
                    "verdict": "PASS" if res.verdict else "FAIL",
                    "mismatches": "; ".join(res.mismatches) or "none",
                },
            )
            print(f"verdict: {'PASS' if res.verdict else 'FAIL'}")
            for msg in res.mismatches:
                print(f"  mismatch: {msg}")
            return EXIT_OK if res.verdict else EXIT_MISMATCH

        if args.command == "bisect":
            cal = _require_calibration(args, params, grid, writer)
            prof = cal.plain
            eps = args.eps
            bump = make_bump(BumpSpec(epsilon=eps, a1=cal.a1, a2=cal.a2, amplitude=prof.amplitude), params)
            window = ObjectiveWindow(prof.c1 * eps**2, prof.c2 * eps**2, "max_positive")
            fld0 = grid.sample(bump)
            slope0 = float(np.max(np.abs(fld0.gradient())))
            cfg = SolveConfig(
                k_schedule=schedule_for_slope(slope0, levels=2, headroom=2.5),
                t_end=1.2 * prof.c2 * eps**2,
                lbc_ref_scale=eps,
                extra_diag_times=tuple(np.linspace(window.t_lo, window.t_hi, 80)),
                mono_tol=0.5e-3,
            )
            budget = SolveBudget(limit=args.budget)

            def family(lam):
                return viscosity_solve(grid.sample(lambda x: lam * bump(x)), cfg, params)

            res = bisect_critical(family, window, tol=args.tol, budget=budget)
            runio.write_manifest(
                {
                    "run": {"command": "bisect", "eps": eps, "tol": args.tol, "seed": args.seed},
                    "result": {
                        "lambda_star": res.mu_star,
                        "bracket_lo": res.bracket[0],
                        "bracket_hi": res.bracket[1],
                        "evaluations": res.evaluations,
                    },
                    "audit": {f"eval_{i:03d}": (mu, val) for i, (mu, val) in enumerate(res.audit)},
                },
                writer.path("bisect.txt"),
            )
            print(f"lambda* = {res.mu_star!r} bracket = {res.bracket}")
            return EXIT_OK

        if args.command in ("mc-check", "mc_check"):
            cal = _load_calibration(args, params, grid)
            fld, meta = parse_init(args.init, params, grid, cal)
            cfg = _solve_config_for_field(fld, args, 1.3 * args.horizon, float(meta.get("eps", 0.1)))
            traj = viscosity_solve(fld, cfg, params)
            rows = []
            for policy in (Policy.ZERO_CONTROL, Policy.PDE_FEEDBACK):
                run = ControlRun(
                    x0=args.x0, horizon=args.horizon, n_paths=args.n_paths,
                    policy=policy, seed=args.seed,
                    slope_clip=float(np.sqrt(cfg.k_schedule[-1])),
                )
                done = simulate_gain(run, fld, traj, params)
                rows.append(done)
                print(
                    f"{policy.value}: gain = {done.mean_gain:.5f} +- {done.ci_halfwidth:.5f}"
                    f"{' (accuracy warning)' if done.accuracy_warning else ''}"
                )
            val = pde_value(traj, args.x0, args.horizon)
            print(f"pde value at (x0={args.x0}, t={args.horizon}): {val:.5f}")
            runio.write_manifest(
                {
                    "run": {
                        "command": "mc_check", "init": args.init, "x0": args.x0,
                        "horizon": args.horizon, "n_paths": args.n_paths, "seed": args.seed,
                    },
                    "results": {
                        "pde_value": val,
                        **{
                            f"{r.policy.value}_{k}": getattr(r, k)
                            for r in rows
                            for k in ("mean_gain", "ci_halfwidth", "exit_overshoot_frac")
                        },
                    },
                },
                writer.path("mc_check.txt"),
            )
            return EXIT_OK

        if args.command == "audit":
            cal = _load_calibration(args, params, grid)
            fld, meta = parse_init(args.init, params, grid, cal)
            eps_meta = float(meta.get("eps", 0.1))
            t_end = args.t_end if args.t_end else 60.0 * eps_meta**2
            cfg = _solve_config_for_field(fld, args, t_end, eps_meta)
            traj = viscosity_solve(fld, cfg, params)
            report = classify(traj, params)
            record = zero_number_audit(traj, params, transitions=report.transitions)
            _write_run(writer, traj, report, {"command": "audit", "init": args.init})
            runio.write_manifest(
                {
                    "audit": {
                        "monotone_checked": record.monotone_checked,
                        "passed": record.passed,
                        "violations": len(record.violations),
                        "drops": [d for _, d in record.transition_drops],
                        "witness": record.nonmonotone_witness or "none",
                    }
                },
                writer.path("audit.txt"),
            )
            print(f"audit passed: {record.passed}")
            return EXIT_OK if record.passed else EXIT_NUMERICAL

        raise UsageError(f"unknown command {args.command!r}")
    finally:
        if pool is not None:
            pool.shutdown()
        writer.finalize()


if __name__ == "__main__":
    sys.exit(main())
