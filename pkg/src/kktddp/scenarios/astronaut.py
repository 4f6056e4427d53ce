"""Zero-gravity attitude reorientation of a floating three-link body."""
from __future__ import annotations

import numpy as np

from ..costs import (
    control_reg_term,
    joint_limit_barrier_term,
    orientation_goal_term,
    state_reg_term,
)
from ..ddp import SolverSettings
from ..model import KinematicTree, builtin_model
from .problem import ContactPhase, Scenario

DEFAULT_WEIGHTS = {
    "orientation": 1e3,  # final base angle
    "final_velocity": 10.0,  # final generalized velocity
    "final_posture": 0.0,  # final joint angles back to neutral (off: see README)
    "posture": 1e-2,  # running joint-angle regularization
    "velocity": 1e-3,  # running velocity regularization
    "control": 1e-2,
    "barrier_margin": 0.1,
    "barrier_stiffness": 30.0,
}


def build_astronaut(
    target_rotation: float = np.pi / 2,
    duration: float = 5.0,
    dt: float = 0.01,
    weights: dict | None = None,
    settings: SolverSettings | None = None,
    tree: KinematicTree | None = None,
) -> Scenario:
    """Rotate the floating base by ``target_rotation`` using only joint torques.

    Gravity is zero and no contact is ever active. The goal is a final cost on
    the base orientation; posture and velocity are regularized along the way,
    joint limits are kept with barrier residuals, and the solver starts from
    zero torques.
    """
    if abs(target_rotation) > 2 * np.pi:
        raise ValueError("target rotation must lie within one full turn")
    if not dt > 0 or not duration > 0:
        raise ValueError("duration and dt must be positive")
    w = {**DEFAULT_WEIGHTS, **(weights or {})}
    tree = tree or builtin_model("astronaut")
    n, nj = tree.nv, tree.n_joints
    N = int(round(duration / dt))

    posture = np.zeros(2 * n)
    w_run = np.zeros(2 * n)
    w_run[3:n] = w["posture"]
    w_run[n:] = w["velocity"]
    w_fin = np.zeros(2 * n)
    w_fin[3:n] = w["final_posture"]
    w_fin[n:] = w["final_velocity"]

    running = [
        state_reg_term(2 * n, posture, w_run, name="posture"),
        control_reg_term(nj, w["control"], name="control"),
        joint_limit_barrier_term(
            tree, margin=w["barrier_margin"], stiffness=w["barrier_stiffness"], name="limits"
        ),
    ]
    terminal = [
        orientation_goal_term(tree, 0, target_rotation, w["orientation"], name="orientation"),
        state_reg_term(2 * n, posture, w_fin, terminal=True, name="final_state"),
        joint_limit_barrier_term(
            tree,
            margin=w["barrier_margin"],
            stiffness=w["barrier_stiffness"],
            terminal=True,
            name="final_limits",
        ),
    ]
    return Scenario(
        name="astronaut",
        tree=tree,
        phases=[ContactPhase((), N, "flight")],
        dt=dt,
        x0=np.zeros(2 * n),
        running=running,
        terminal=terminal,
        gravity=np.zeros(2),
        settings=settings or SolverSettings(),
        references={"posture": posture},
        initial_guess="zeros",
        metadata={
            "builder": "astronaut",
            "target_rotation": float(target_rotation),
            "duration": float(duration),
            "dt": float(dt),
            "weights": w,
        },
    )
