"""
Three steps, planned versus tracked
===================================

Solves the shipped 0.4 m, three-step stride and compares it with the
instantaneous tracking baseline on the same references: total cost, peak
normal force, and how still the stance feet stay. Takes about a minute.
"""

import sys
from pathlib import Path

from kktddp.cli import write_trajectory_csv
from kktddp.ddp import solve
from kktddp.scenarios import ScenarioProblem, diagnostics, ik_baseline, load_scenario, total_cost

sc = load_scenario("stride")
print(f"{sc.name}: {sc.horizon} steps of {sc.dt} s, phases "
      + " ".join(f"{p.kind}:{p.duration}" for p in sc.phases))

ik = ik_baseline(sc)
trace = solve(ScenarioProblem(sc), ik.U, sc.settings)
print(f"DDP: {trace.status} after {trace.iterations} iterations")

for label, (X, U, Lam) in {"DDP": (trace.X, trace.U, trace.Lam),
                           "tracking": (ik.X, ik.U, ik.Lam)}.items():
    d = diagnostics(sc, X, U, Lam)
    print(f"{label:<9} cost {total_cost(sc, X, U, Lam):12.4f}   peak normal force "
          f"{d.peak_normal_force():7.1f} N   stance drift {d.max_stance_drift:.1e} m   "
          f"max CoM error {d.com_error.max():.3f} m")

# the same CSV layout the command line writes
if len(sys.argv) > 1:
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", sc, trace.X, trace.U, trace.Lam)
    write_trajectory_csv(out / "ik_trajectory.csv", sc, ik.X, ik.U, ik.Lam)
    print(f"trajectories written to {out}")
