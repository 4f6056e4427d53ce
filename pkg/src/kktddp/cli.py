"""Command-line front end: ``kktddp run <config>`` and ``kktddp validate <config>``.

Exit codes: 0 converged (or nothing to optimize), 2 not converged, 3 config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contact_dynamics import kkt_matrices
from .ddp import RolloutDivergence, solve
from .model import State, centroidal_angular_momentum, com
from .scenarios.config import ConfigError, load_scenario, resolve_config, validate_config
from .scenarios.diagnostics import diagnostics
from .scenarios.ik import ik_baseline
from .scenarios.problem import Scenario, ScenarioProblem, total_cost

EXIT_CONVERGED = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG_ERROR = 3
OUTPUT_ROOT_ENV = "KKTDDP_OUTPUT_ROOT"


@dataclass
class RunManifest:
    config: Path
    out: Path | None = None
    iterations: int | None = None
    dt: float | None = None
    regularization: str | None = None
    seed: int = 0
    ik_baseline: bool = False
    dump_kkt: bool = False
    verbose: bool = False

    def output_dir(self, scenario_name: str) -> Path:
        if self.out is not None:
            return Path(self.out)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / scenario_name


def _fmt(x) -> str:
    return format(float(x), ".17g")


def coordinate_names(tree) -> list[str]:
    return ["base_x", "base_z", "base_theta"] + [link.name for link in tree.links[1:]]


def write_trajectory_csv(path, scenario: Scenario, X, U, Lam) -> None:
    """One row per state; controls and forces are empty on the final row and for
    contacts that are inactive at that step."""
    tree, dt = scenario.tree, scenario.dt
    n, N = tree.nv, scenario.horizon
    names = coordinate_names(tree)
    force_cols = [(c, d) for c, pt in tree.contacts.items() for d in pt.constrained_dims]
    header = (["step", "time"] + [f"q_{s}" for s in names] + [f"v_{s}" for s in names]
              + [f"u_{s}" for s in names[3:]] + [f"lam_{c}_{d}" for c, d in force_cols]
              + ["com_x", "com_z", "angular_momentum"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for i in range(N + 1):
            x = X[i]
            row = [i, _fmt(i * dt)] + [_fmt(a) for a in x]
            if i < N:
                row += [_fmt(a) for a in U[i]]
                vals, off = {}, 0
                for c in scenario.contact_names(i):
                    for d in tree.contacts[c].constrained_dims:
                        vals[(c, d)] = Lam[i][off]
                        off += 1
                row += [_fmt(vals[k]) if k in vals else "" for k in force_cols]
            else:
                row += [""] * (tree.n_joints + len(force_cols))
            c = com(tree, x[:n])
            row += [_fmt(c[0]), _fmt(c[1]),
                    _fmt(centroidal_angular_momentum(tree, State(x[:n], x[n:])))]
            w.writerow(row)


def write_kkt_dump(path, scenario: Scenario, X, U) -> None:
    """KKT blocks at every step of a trajectory, as structured text."""
    tree = scenario.tree
    n = tree.nv
    with open(path, "w") as fh:
        for i in range(scenario.horizon):
            blocks = kkt_matrices(tree, State(X[i, :n], X[i, n:]), U[i], scenario.contacts(i),
                                  scenario.gravity)
            contacts = ",".join(scenario.contact_names(i)) or "-"
            fh.write(f"step {i} phase {scenario.phase_index(i)} contacts {contacts}\n")
            for name, block in blocks.items():
                block = np.atleast_2d(block)
                fh.write(f"{name} {block.shape[0]} {block.shape[1]}\n")
                for row in block:
                    fh.write(" ".join(_fmt(a) for a in row) + "\n")
            fh.write("\n")


def _initial_controls(scenario: Scenario, ik):
    guess = scenario.initial_guess
    if isinstance(guess, str):
        if guess == "ik":
            return ik.U.copy()
        return np.zeros((scenario.horizon, scenario.nu))
    return np.asarray(guess, dtype=float)


def run(manifest: RunManifest) -> int:
    t0 = time.perf_counter()
    try:
        scenario = load_scenario(manifest.config, manifest.dt, manifest.iterations,
                                 manifest.regularization)
    except ConfigError as exc:
        for issue in exc.issues:
            print(f"config error: {issue}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    out = manifest.output_dir(scenario.name)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: --out: cannot create {out} ({exc.strerror})", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    # nothing in a run draws random numbers; the seed is fixed for any that might
    np.random.seed(manifest.seed)

    need_ik = manifest.ik_baseline or (isinstance(scenario.initial_guess, str)
                                       and scenario.initial_guess == "ik")
    ik = ik_baseline(scenario) if need_ik else None
    problem = ScenarioProblem(scenario)

    def progress(rec):
        if manifest.verbose:
            print(f"iter {rec.iteration:4d}  cost {rec.cost:.10g}  alpha {rec.alpha:g}  "
                  f"mu {rec.mu:.3g}", file=sys.stderr)

    try:
        trace = solve(problem, _initial_controls(scenario, ik), scenario.settings, progress)
    except RolloutDivergence as exc:
        print(f"error: initial rollout diverged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED

    optimize = scenario.settings.max_iterations > 0
    status = trace.status if optimize else "initial_rollout"
    write_trajectory_csv(out / "trajectory.csv", scenario, trace.X, trace.U, trace.Lam)
    trace.write_iterations_csv(out / "iterations.csv")
    report = diagnostics(scenario, trace.X, trace.U, trace.Lam)
    report.write_csv(out / "diagnostics.csv")
    summary = {
        "scenario": scenario.name,
        "config": str(resolve_config(manifest.config)),
        "status": status,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "accepted_iterations": len(trace.records) - 1,
        "initial_cost": trace.records[0].cost,
        "final_cost": trace.cost,
        "final_cost_reevaluated": total_cost(scenario, trace.X, trace.U, trace.Lam),
        "cost_terms": trace.records[-1].terms,
        "regularization": scenario.settings.regularization,
        "dt": scenario.dt,
        "horizon": scenario.horizon,
        "seed": manifest.seed,
        "diagnostics": report.summary(),
    }
    if manifest.ik_baseline:
        write_trajectory_csv(out / "ik_trajectory.csv", scenario, ik.X, ik.U, ik.Lam)
        ik_report = diagnostics(scenario, ik.X, ik.U, ik.Lam)
        ik_report.write_csv(out / "ik_diagnostics.csv")
        ddp_peak, ik_peak = report.peak_normal_force(), ik_report.peak_normal_force()
        summary["ik_baseline"] = {
            "cost": total_cost(scenario, ik.X, ik.U, ik.Lam),
            "fallback_steps": ik.fallback_steps,
            "diagnostics": ik_report.summary(),
            "peak_force_ratio": ddp_peak / ik_peak if ik_peak > 0 else None,
        }
    if manifest.dump_kkt:
        write_kkt_dump(out / "kkt_dump.txt", scenario, trace.X, trace.U)
    summary["wall_time"] = time.perf_counter() - t0
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    print(json.dumps({k: summary[k] for k in (
        "scenario", "status", "converged", "iterations", "final_cost", "wall_time")}))
    print(f"outputs written to {out}")
    if trace.converged or not optimize:
        return EXIT_CONVERGED
    return EXIT_NOT_CONVERGED


def validate(paths) -> int:
    failed = 0
    for p in paths:
        issues = validate_config(p)
        if issues:
            failed += 1
            print(f"FAIL {p}: {len(issues)} issue(s)")
            for issue in issues:
                print(f"  {issue}")
        else:
            sc = load_scenario(p)
            print(f"OK   {p}: {sc.name}, horizon {sc.horizon}, {len(sc.phases)} phase(s), "
                  f"{len(sc.running)} running and {len(sc.terminal)} final cost terms")
    return EXIT_CONFIG_ERROR if failed else EXIT_CONVERGED


def _nonnegative_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kktddp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="solve a scenario and write CSV outputs")
    r.add_argument("config", help="config file, or the name of a shipped config")
    r.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ROOT_ENV}/"
                                            "<scenario>, or runs/<scenario>)")
    r.add_argument("--iterations", type=_nonnegative_int, help="iteration budget")
    r.add_argument("--dt", type=_positive_float, help="time step (generator configs only)")
    r.add_argument("--reg", choices=("quu", "vxx"), help="regularization mode")
    r.add_argument("--ik-baseline", action="store_true", help="also run the IK baseline")
    r.add_argument("--dump-kkt", action="store_true", help="write the KKT blocks per step")
    r.add_argument("--seed", type=int, default=0, help="seed for randomized utilities")
    r.add_argument("-v", "--verbose", action="store_true", help="print iteration progress")
    v = sub.add_parser("validate", help="check configs without solving")
    v.add_argument("config", nargs="+")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return validate(args.config)
    return run(RunManifest(
        config=Path(args.config), out=args.out, iterations=args.iterations, dt=args.dt,
        regularization=args.reg, seed=args.seed, ik_baseline=args.ik_baseline,
        dump_kkt=args.dump_kkt, verbose=args.verbose,
    ))


if __name__ == "__main__":
    sys.exit(main())
