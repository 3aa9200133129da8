"""Command-line entry point.

Every subcommand writes ``manifest.json`` (config echo, seed, library
versions, wall-clock times), ``config.json`` (the config alone, so that
``--config <out>/config.json`` reruns it) and ``report.json`` with the
top-level keys ``command``, ``config``, ``results`` and ``pass``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import platform
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, abm, metric, pde
from .config import ConfigError, RunConfig, config_from_dict, load_config, stream
from .gini import gini_report
from .grid import DensityField
from .kernels import get_kernel
from .potentiality import OPERATORS, potentiality_residual, yard_sale_w2_residual
from .verify import _jsonable, verify_all


def write_csv(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([f"{float(v):.17g}" for v in row])


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return header, np.array(rows)


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version(), "ginigrad": __version__}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


class Run:
    """Bookkeeping for one subcommand invocation."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, quiet: bool):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.quiet = quiet
        self.start = datetime.now(timezone.utc)
        out.mkdir(parents=True, exist_ok=True)

    def finish(self, results: list[dict], passed: bool, extra: dict | None = None) -> int:
        cfg = self.cfg.to_dict()
        (self.out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        manifest = {
            "command": self.command,
            "config": cfg,
            "seed": self.cfg.seed,
            "versions": _versions(),
            "start": self.start.isoformat(),
            "end": datetime.now(timezone.utc).isoformat(),
            **(extra or {}),
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        report = {"command": self.command, "config": cfg, "results": _jsonable(results), "pass": bool(passed)}
        (self.out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
        if not self.quiet:
            print(json.dumps(report, indent=2))
        return 0 if passed else 1


# subcommands ---------------------------------------------------------------


def cmd_simulate_abm(args, cfg: RunConfig, run: Run) -> int:
    k = get_kernel(cfg.model)
    sim = cfg.sim_config()
    results = []
    trajs = []
    for r in range(cfg.abm.n_seeds):
        init = abm.initial_wealths(sim, stream(cfg.seed, "init", r))
        tr = abm.run(sim, k, stream(cfg.seed, "abm", r), init)
        trajs.append(tr)
        name = "abm.csv" if r == 0 else f"abm_seed{r:03d}.csv"
        write_csv(run.out / name, ["t", "gini", "min_wealth", "total_wealth"],
                  [tr.t, tr.gini, tr.min_wealth, tr.total_wealth])
        drift = float(np.max(np.abs(tr.total_wealth - tr.total_wealth[0])) / tr.total_wealth[0])
        results.append({"replica": r, "final_gini": float(tr.gini[-1]),
                        "min_wealth": float(tr.min_wealth.min()), "wealth_drift": drift})
    if len(trajs) > 1:
        g = np.stack([t.gini for t in trajs])
        write_csv(run.out / "abm_ensemble.csv", ["t", "mean_gini", "std_gini"],
                  [trajs[0].t, g.mean(axis=0), g.std(axis=0)])
    passed = all(r["min_wealth"] > 0 and r["wealth_drift"] < 1e-9 for r in results)
    return run.finish(results, passed, {"time_normalization": abm.TIME_NORMALIZATION})


def write_trajectory(tr: pde.PdeTrajectory, out: Path) -> None:
    write_csv(out / "trajectory.csv", ["t", "gini", "m0", "m1", "m4"], [tr.t, tr.gini, tr.m0, tr.m1, tr.m4])
    write_csv(out / "snapshot_times.csv", ["index", "t"], [np.arange(tr.n_snapshots), tr.snapshot_t])
    for j in range(tr.n_snapshots):
        tr.density(j).to_csv(_snapshot_path(out, j))


def _snapshot_path(out: Path, j: int) -> Path:
    path = out / "snapshots" / f"rho_{j:05d}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def load_trajectory(directory: Path) -> tuple[pde.PdeTrajectory, RunConfig]:
    """Rebuild a trajectory written by ``solve-pde``."""
    cfg = load_config(directory / "config.json")
    _, traj = read_csv(directory / "trajectory.csv")
    _, times = read_csv(directory / "snapshot_times.csv")
    snaps = [DensityField.from_csv(_snapshot_path(directory, int(j))) for j in times[:, 0]]
    grid = snaps[0].grid
    return pde.PdeTrajectory(
        grid=grid, kernel=cfg.model, gamma=cfg.gamma, dt=float(traj[1, 0] - traj[0, 0]),
        t=traj[:, 0], gini=traj[:, 1], m0=traj[:, 2], m1=traj[:, 3], m4=traj[:, 4],
        snapshot_t=times[:, 1], snapshots=np.stack([s.values for s in snaps]),
    ), cfg


def cmd_solve_pde(args, cfg: RunConfig, run: Run) -> int:
    k = get_kernel(cfg.model)
    tr = pde.solve(cfg.initial(), k, cfg.gamma, cfg.pde.T, cfg.scheme_config())
    write_trajectory(tr, run.out)
    d0, d1 = tr.max_relative_drift()
    inc = tr.min_gini_increment()
    res = {"dt": tr.dt, "steps": int(tr.t.size - 1), "m0_drift": d0, "m1_drift": d1,
           "min_gini_increment": inc, "gini_initial": float(tr.gini[0]), "gini_final": float(tr.gini[-1]),
           "tail_mass_final": tr.density(tr.n_snapshots - 1).tail_mass()}
    return run.finish([res], d0 < 1e-8 and d1 < 1e-8 and inc >= -1e-10)


def cmd_gini(args, cfg: RunConfig, run: Run) -> int:
    rho = DensityField.from_csv(args.density)
    rep = gini_report(rho)
    return run.finish([rep.to_dict()], True)


def _trajectory_for(args, cfg: RunConfig, dense: bool) -> tuple[pde.PdeTrajectory, RunConfig]:
    if args.trajectory:
        return load_trajectory(Path(args.trajectory))
    scheme = cfg.scheme_config()
    if dense:
        scheme = dataclasses.replace(scheme, snapshot_every=1)
    return pde.solve(cfg.initial(), get_kernel(cfg.model), cfg.gamma, cfg.pde.T, scheme), cfg


def cmd_metric(args, cfg: RunConfig, run: Run) -> int:
    k = get_kernel(cfg.model)
    if args.metric_command == "norm":
        a = DensityField.from_csv(args.density)
        b = DensityField.from_csv(args.other)
        if a.grid != b.grid:
            raise ConfigError("both densities must live on the same grid")
        weight = {"rho": lambda: metric.MetricWeight.from_density(a),
                  "D": lambda: metric.MetricWeight.from_diffusion(k, a, cfg.gamma),
                  "dx": lambda: metric.MetricWeight.lebesgue(a.grid)}[args.weight]()
        sol = metric.solve_weighted_biharmonic(weight, b.values - a.values, a.grid)
        res = {"dual_norm": float(np.sqrt(sol.norm_sq)), "weight": args.weight,
               "compat_m0": sol.compat_m0, "compat_m1": sol.compat_m1, "floor_active": sol.floor_active}
        return run.finish([res], True)
    if args.metric_command == "verify-flow":
        tr, tcfg = _trajectory_for(args, cfg, dense=True)
        rep = metric.verify_gradient_flow(tr, get_kernel(tcfg.model), tcfg.gamma, stride=args.stride)
        write_csv(run.out / "gradient_flow.csv", ["t", "residual", "energy_defect", "dgini_dt", "dissipation"],
                  [rep.t, rep.residual, rep.energy_defect, rep.dgini_dt, rep.dissipation])
        d = rep.to_dict()
        return run.finish([d], d["median_residual"] < 1e-2 and d["median_energy_defect"] < 1e-2)
    if args.metric_command == "inequalities":
        rep = metric.transport_inequality_suite(stream(cfg.seed, "fuzz"), cfg.fuzz.n_trials)
        res = {"trials": rep.n_trials, "violations": rep.counts(),
               "worst_margin": {n: rep.worst_margin(n) for n in rep.counts()}}
        return run.finish([res], rep.passed)
    if args.metric_command == "fourth-moment":
        tr, _ = _trajectory_for(args, cfg, dense=False)
        path = [tr.density(j) for j in range(tr.n_snapshots)]
        rep = metric.fourth_moment_check(path, tr.snapshot_t)
        write_csv(run.out / "fourth_moment.csv", ["lhs", "rhs", "identity_lhs", "identity_rhs"],
                  [rep.lhs, rep.rhs, rep.identity_lhs, rep.identity_rhs])
        return run.finish([rep.to_dict()], rep.violations == 0)
    raise AssertionError(args.metric_command)


def cmd_potentiality(args, cfg: RunConfig, run: Run) -> int:
    rho = DensityField.from_csv(args.density)
    if args.operator == "yard-sale-w2":
        rep = yard_sale_w2_residual(rho, n_r=args.n_r)
        d = rep.to_dict()
        d["operator"] = args.operator
        d["nonzero"] = bool(d["numeric_max"] > 0.01)
        return run.finish([d], d["nonzero"])
    res = potentiality_residual(OPERATORS[args.operator](), rho, n_r=args.n_r)
    d = {"operator": args.operator, "max_abs_residual": res.max_abs,
         "max_relative_residual": res.max_relative, "nonzero": bool(res.max_relative > 1e-3)}
    return run.finish([d], True)


def cmd_verify_all(args, cfg: RunConfig, run: Run) -> int:
    criteria = [int(c) for c in args.criteria.split(",")] if args.criteria else None
    echo = None if run.quiet else (lambda line: print(line, file=sys.stderr))
    rep = verify_all(cfg, criteria, echo)
    return run.finish([r.to_dict() for r in rep.results], rep.passed)


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration (defaults when omitted)")
    common.add_argument("--out", type=Path, help="output directory (default: config 'outputs')")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="do not print the JSON report")

    parser = argparse.ArgumentParser(prog="ginigrad", description="Wealth exchange simulations and Gini gradient-flow checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate-abm", parents=[common], help="agent Monte Carlo")
    sub.add_parser("solve-pde", parents=[common], help="mean-field solver")
    p = sub.add_parser("gini", parents=[common], help="Gini report for a density CSV")
    p.add_argument("--density", type=Path, required=True)

    p = sub.add_parser("metric", help="weighted biharmonic metric tools")
    msub = p.add_subparsers(dest="metric_command", required=True)
    q = msub.add_parser("norm", parents=[common], help="dual norm of the difference of two densities")
    q.add_argument("--density", type=Path, required=True, help="base density (sets the weight)")
    q.add_argument("--other", type=Path, required=True)
    q.add_argument("--weight", choices=metric.WEIGHT_MODES, default="rho")
    q = msub.add_parser("verify-flow", parents=[common], help="gradient-flow residuals along a trajectory")
    q.add_argument("--trajectory", type=Path, help="directory written by solve-pde")
    q.add_argument("--stride", type=int, default=10)
    msub.add_parser("inequalities", parents=[common], help="randomized transport inequality checks")
    q = msub.add_parser("fourth-moment", parents=[common], help="fourth-moment bound along a trajectory")
    q.add_argument("--trajectory", type=Path, help="directory written by solve-pde")

    p = sub.add_parser("potentiality", parents=[common], help="potentiality residual of an operator")
    p.add_argument("--density", type=Path, required=True)
    p.add_argument("--operator", choices=sorted(OPERATORS), default="yard-sale-w2")
    p.add_argument("--n-r", type=int, default=64)

    p = sub.add_parser("verify-all", parents=[common], help="run every acceptance criterion")
    p.add_argument("--criteria", help="comma-separated subset, e.g. 1,2,5")
    return parser


COMMANDS = {
    "simulate-abm": cmd_simulate_abm,
    "solve-pde": cmd_solve_pde,
    "gini": cmd_gini,
    "metric": cmd_metric,
    "potentiality": cmd_potentiality,
    "verify-all": cmd_verify_all,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else config_from_dict({})
        if args.seed is not None:
            cfg = config_from_dict({**cfg.to_dict(), "seed": args.seed})
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    name = args.command if args.command != "metric" else f"metric {args.metric_command}"
    out = args.out or Path(cfg.outputs)
    run = Run(name, cfg, out, args.quiet)
    try:
        return COMMANDS[args.command](args, cfg, run)
    except (ValueError, FileNotFoundError, pde.StabilityError) as exc:
        print(f"{name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
