"""
Turning in zero gravity
=======================

A floating torso with a two-link leg starts at rest with zero angular
momentum and has to end rotated by 90 degrees. Momentum stays zero, so every
change of attitude has to be paid for with joint motion.

Pass ``--closed`` to also ask for the joints back at rest at the end, which
needs a loop in joint space and takes about a minute.
"""

import sys
from dataclasses import replace

import numpy as np

from kktddp.costs import orientation_goal_term
from kktddp.ddp import solve
from kktddp.model import State, centroidal_angular_momentum
from kktddp.scenarios import ScenarioProblem, build_astronaut, ik_baseline

sc = build_astronaut(np.pi / 2)
n = sc.tree.nv


def report(label, X):
    am = [centroidal_angular_momentum(sc.tree, State(x[:n], x[n:])) for x in X]
    print(f"{label:<28} base angle {X[-1, 2]:+.4f} rad   joints {np.round(X[-1, 3:n], 3)}   "
          f"|AM| <= {np.abs(am).max():.1e}")


# DDP from zero torques; the only goal is a final cost on the base angle
trace = solve(ScenarioProblem(sc), None, sc.settings)
print(f"DDP: {trace.status} after {trace.iterations} iterations, cost {trace.cost:.4f}")
report("DDP", trace.X)

# the instantaneous tracking law sees only running terms, so it has no reason to move
report("tracking law (no preview)", ik_baseline(sc).X)

# handed the goal as a running task, the same law turns the base greedily,
# but it does so by leaving the leg folded
greedy = orientation_goal_term(sc.tree, 0, np.pi / 2, 10.0, name="orientation_running")
report("tracking law (greedy goal)", ik_baseline(replace(sc, running=sc.running + [greedy])).X)

if "--closed" in sys.argv:
    closed = build_astronaut(np.pi / 2, weights={"final_posture": 100.0})
    trace = solve(ScenarioProblem(closed), None, closed.settings)
    print(f"DDP with final posture: {trace.status} after {trace.iterations} iterations")
    report("DDP, joints back at rest", trace.X)
