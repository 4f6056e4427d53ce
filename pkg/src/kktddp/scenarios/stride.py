"""Multi-phase planar walking with scripted centroidal and swing-foot references.

Gait layout for ``n_steps`` steps (feet start together at x = 0): the right
foot steps first and lands ``stride_length / 2`` ahead of the stance foot, the
following steps land ``stride_length / 2`` ahead of the other foot (a full
stride of displacement), and the last step brings the feet together again.
The CoM rests over the stance foot during single support and is shifted to
the next stance foot during double support, at constant height.
"""
from __future__ import annotations

import numpy as np

from ..contact_dynamics import kkt_solve
from ..costs import (
    control_reg_term,
    force_tracking_term,
    frame_tracking_term,
    friction_cone_term,
    joint_limit_barrier_term,
    state_reg_term,
    com_tracking_term,
)
from ..ddp import SolverSettings
from ..model import KinematicTree, State, builtin_model, com, contact_jacobian, bias_forces
from .problem import ContactPhase, Scenario, ScenarioError

LEG = (0.4, 0.4)  # thigh and shank lengths of the walker
HIP_HEIGHT = 0.74  # nominal hip height, lowered for long strides
SWING_HEIGHT = 0.06
REACH = 0.98

DEFAULT_TIMING = {"initial": 0.3, "single": 0.5, "double": 0.6, "final": 0.6}

DEFAULT_WEIGHTS = {
    "com": 1e3,
    "swing_position": 1e4,
    "swing_velocity": 1e2,
    "touchdown_position": 1e4,  # landing-state foot position
    "touchdown_velocity": 1e7,  # landing-state foot velocity (drift during stance)
    "force": 1e-4,
    "control": 1e-3,
    "torso": 1e2,
    "joints": 1.0,
    "velocity": 0.1,
    "final_posture": 1e2,
    "final_velocity": 10.0,
    "friction_mu": 0.7,
    "friction": 1e-2,
    "barrier_margin": 0.05,
    "barrier_stiffness": 30.0,
}


class ReachabilityError(ScenarioError):
    """A foot reference lies outside the leg workspace."""


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s * s)


def _smoothstep_rate(s):
    s = np.clip(s, 0.0, 1.0)
    return 30 * s * s * (1 - s) ** 2


def leg_ik(hip, foot, torso_angle=0.0, leg=LEG):
    """Hip and knee angles placing the foot at ``foot`` (knee bending backward)."""
    l1, l2 = leg
    d = np.asarray(foot, float) - np.asarray(hip, float)
    r = float(np.hypot(*d))
    if r > REACH * (l1 + l2) or r < abs(l1 - l2) + 1e-6:
        raise ReachabilityError(
            f"foot at distance {r:.3f} m from the hip, reach is {REACH * (l1 + l2):.3f} m"
        )
    knee = -np.arccos(np.clip((r * r - l1 * l1 - l2 * l2) / (2 * l1 * l2), -1.0, 1.0))
    direction = np.arctan2(d[0], -d[1])
    offset = np.arctan2(l2 * np.sin(knee), l1 + l2 * np.cos(knee))
    return direction - offset - torso_angle, knee


def _posture(tree, hip, left, right):
    q = np.zeros(tree.nv)
    q[0:2] = hip
    q[3:5] = leg_ik(hip, left)
    q[5:7] = leg_ik(hip, right)
    return q


def _posture_for_com(tree, com_ref, left, right, hip_guess):
    hip = np.array(hip_guess, dtype=float)
    for _ in range(30):
        q = _posture(tree, hip, left, right)
        err = com_ref - com(tree, q)
        if np.max(np.abs(err)) < 1e-12:
            break
        hip = hip + err
    return _posture(tree, hip, left, right)


def static_forces(tree: KinematicTree, q, contacts, gravity):
    """Minimum-torque static equilibrium at ``q``: torques, then forces from a KKT solve.

    Returns ``(tau, lam)``; ``lam`` is the KKT dual at zero velocity, so it
    carries whatever residual acceleration the posture cannot hold statically.
    """
    state = State(q, np.zeros(tree.nv))
    b = bias_forces(tree, state, gravity)
    J = contact_jacobian(tree, q, contacts)
    S = tree.selection_matrix
    A = np.hstack([S, J.T])
    # min |tau|^2 + eps |lam|^2  s.t.  S tau + J^T lam = b
    eps = 1e-6
    Wi = np.diag(np.concatenate([np.ones(S.shape[1]), np.full(J.shape[0], 1.0 / eps)]))
    z = Wi @ A.T @ np.linalg.lstsq(A @ Wi @ A.T, b, rcond=None)[0]
    tau = z[: S.shape[1]]
    sol = kkt_solve(tree, state, tau, contacts, damping=0.0, gravity=gravity)
    return tau, sol.lam


def gait_plan(stride_length: float, n_steps: int, timing: dict, dt: float):
    """Phases plus per-state foot and CoM x-references (before posture solving)."""
    t = {**DEFAULT_TIMING, **(timing or {})}
    steps = {k: max(1, int(round(v / dt))) for k, v in t.items()}
    feet = {"left_foot": 0.0, "right_foot": 0.0}
    phases = [ContactPhase(("left_foot", "right_foot"), steps["initial"], "double_support")]
    com_x = [0.0] * steps["initial"]
    foot_x = {k: [0.0] * steps["initial"] for k in feet}
    foot_z = {k: [0.0] * steps["initial"] for k in feet}
    foot_vx = {k: [0.0] * steps["initial"] for k in feet}
    foot_vz = {k: [0.0] * steps["initial"] for k in feet}
    swings = []
    swing, stance = "right_foot", "left_foot"
    for j in range(n_steps):
        start = feet[swing]
        if j == n_steps - 1 and n_steps > 1:
            target = feet[stance]
        else:
            target = feet[stance] + 0.5 * stride_length
        T = steps["single"]
        k0 = sum(p.duration for p in phases)
        phases.append(ContactPhase((stance,), T, "single_support"))
        swings.append((swing, k0, k0 + T))
        for k in range(T):
            s = k / T
            com_x.append(feet[stance])
            for f in feet:
                if f == swing:
                    h = _smoothstep(s)
                    hd = _smoothstep_rate(s) / (T * dt)
                    foot_x[f].append(start + (target - start) * h)
                    foot_vx[f].append((target - start) * hd)
                    foot_z[f].append(SWING_HEIGHT * np.sin(np.pi * h))
                    foot_vz[f].append(SWING_HEIGHT * np.pi * np.cos(np.pi * h) * hd)
                else:
                    foot_x[f].append(feet[f])
                    foot_vx[f].append(0.0)
                    foot_z[f].append(0.0)
                    foot_vz[f].append(0.0)
        feet[swing] = target
        last = j == n_steps - 1
        D = steps["final"] if last else steps["double"]
        phases.append(ContactPhase(("left_foot", "right_foot"), D, "double_support"))
        c_from = com_x[-1]
        c_to = 0.5 * (feet["left_foot"] + feet["right_foot"]) if last else feet[swing]
        for k in range(D):
            com_x.append(c_from + (c_to - c_from) * _smoothstep(k / max(D - 1, 1)))
            for f in feet:
                foot_x[f].append(feet[f])
                foot_z[f].append(0.0)
                foot_vx[f].append(0.0)
                foot_vz[f].append(0.0)
        swing, stance = stance, swing
    # final state repeats the last references
    com_x.append(com_x[-1])
    for f in feet:
        foot_x[f].append(foot_x[f][-1])
        foot_z[f].append(0.0)
        foot_vx[f].append(0.0)
        foot_vz[f].append(0.0)
    feet_pos = {f: np.column_stack([foot_x[f], foot_z[f]]) for f in feet}
    feet_vel = {f: np.column_stack([foot_vx[f], foot_vz[f]]) for f in feet}
    return phases, np.array(com_x), feet_pos, feet_vel, swings


def build_stride(
    stride_length: float = 0.4,
    n_steps: int = 3,
    dt: float = 0.01,
    weights: dict | None = None,
    settings: SolverSettings | None = None,
    timing: dict | None = None,
    standing_duration: float = 1.0,
    tree: KinematicTree | None = None,
) -> Scenario:
    """Walking scenario on the planar point-foot biped.

    ``stride_length = 0`` gives a standing scenario (one double-support phase
    of ``standing_duration`` seconds). Other strides must lie in [0.1, 1.0] m.
    """
    if stride_length != 0 and not 0.1 <= stride_length <= 1.0:
        raise ReachabilityError("stride length must be 0 or lie in [0.1, 1.0] m")
    if n_steps < 1:
        raise ScenarioError("need at least one step")
    if not dt > 0:
        raise ScenarioError("dt must be positive")
    w = {**DEFAULT_WEIGHTS, **(weights or {})}
    tree = tree or builtin_model("walker")
    gravity = np.array([0.0, -9.81])
    n, nj = tree.nv, tree.n_joints

    if stride_length == 0:
        D = max(1, int(round(standing_duration / dt)))
        phases = [ContactPhase(("left_foot", "right_foot"), D, "double_support")]
        com_x = np.zeros(D + 1)
        feet_pos = {f: np.zeros((D + 1, 2)) for f in ("left_foot", "right_foot")}
        feet_vel = {f: np.zeros((D + 1, 2)) for f in ("left_foot", "right_foot")}
        swings = []
    else:
        phases, com_x, feet_pos, feet_vel, swings = gait_plan(stride_length, n_steps, timing, dt)
    N = sum(p.duration for p in phases)

    # reference postures: torso upright, CoM on the scripted path at constant height;
    # long strides lower the hip so that the leading foot stays inside the workspace
    reach = 0.97 * REACH * sum(LEG)
    half = 0.5 * stride_length
    if half >= reach:
        raise ReachabilityError(
            f"half stride {half:.3f} m exceeds the leg reach {reach:.3f} m"
        )
    hip_height = min(HIP_HEIGHT, float(np.sqrt(reach**2 - half**2)))
    q0 = _posture(tree, (0.0, hip_height), (0.0, 0.0), (0.0, 0.0))
    com_z = com(tree, q0)[1]
    com_ref = np.column_stack([com_x, np.full(N + 1, com_z)])
    posture = np.zeros((N + 1, 2 * n))
    hip = q0[:2]
    for i in range(N + 1):
        try:
            q = _posture_for_com(tree, com_ref[i], feet_pos["left_foot"][i],
                                 feet_pos["right_foot"][i], hip)
        except ReachabilityError as exc:
            raise ReachabilityError(f"step {i}: {exc}") from None
        hip = q[:2]
        posture[i, :n] = q
    posture[:-1, n:] = np.diff(posture[:, :n], axis=0) / dt

    # static force and torque references at the reference postures
    phase_of = np.concatenate([[j] * p.duration for j, p in enumerate(phases)])
    tau_ref = np.zeros((N, nj))
    lam_ref = []
    for i in range(N):
        contacts = [tree.contacts[c] for c in phases[phase_of[i]].contacts]
        tau_ref[i], lam = static_forces(tree, posture[i, :n], contacts, gravity)
        lam_ref.append(lam)

    w_post = np.zeros(2 * n)
    w_post[2] = w["torso"]
    w_post[3:n] = w["joints"]
    w_post[n:] = w["velocity"]
    w_fin = np.zeros(2 * n)
    w_fin[2:n] = w["final_posture"]
    w_fin[n:] = w["final_velocity"]

    running = [
        com_tracking_term(tree, com_ref, w["com"], name="com"),
        state_reg_term(2 * n, posture, w_post, name="posture"),
        control_reg_term(nj, w["control"], reference=tau_ref, name="control"),
        force_tracking_term(lam_ref, w["force"], name="force"),
        friction_cone_term(
            [_layout(phases[phase_of[i]]) for i in range(N)], w["friction_mu"], w["friction"],
            name="friction",
        ),
        joint_limit_barrier_term(tree, margin=w["barrier_margin"],
                                 stiffness=w["barrier_stiffness"], name="limits"),
    ]
    swing_w = np.array([w["swing_position"]] * 2 + [w["swing_velocity"]] * 2)
    touch_w = np.array([w["touchdown_position"]] * 2 + [w["touchdown_velocity"]] * 2)
    for foot, a, b in swings:
        running.append(
            frame_tracking_term(
                tree, tree.contacts[foot], feet_pos[foot], swing_w,
                velocity_reference=feet_vel[foot], window=(a, b), name="swing",
            )
        )
        # the contact constraint holds acceleration only, so the foot must land at rest
        running.append(
            frame_tracking_term(
                tree, tree.contacts[foot], feet_pos[foot], touch_w,
                velocity_reference=feet_vel[foot], window=(b, b + 1), name="touchdown",
            )
        )
    terminal = [
        state_reg_term(2 * n, posture[-1], w_fin, terminal=True, name="final_state"),
        com_tracking_term(tree, com_ref[-1], w["com"], terminal=True, name="final_com"),
    ]

    x0 = posture[0].copy()
    x0[n:] = 0.0
    return Scenario(
        name="stride" if stride_length else "standing",
        tree=tree,
        phases=phases,
        dt=dt,
        x0=x0,
        running=running,
        terminal=terminal,
        gravity=gravity,
        settings=settings or SolverSettings(),
        references={
            "com": com_ref,
            "posture": posture,
            "torque": tau_ref,
            "force": lam_ref,
            "left_foot": feet_pos["left_foot"],
            "right_foot": feet_pos["right_foot"],
            "left_foot_velocity": feet_vel["left_foot"],
            "right_foot_velocity": feet_vel["right_foot"],
        },
        initial_guess="ik",
        metadata={
            "builder": "stride",
            "stride_length": float(stride_length),
            "n_steps": int(n_steps),
            "dt": float(dt),
            "timing": {**DEFAULT_TIMING, **(timing or {})},
            "weights": w,
            "hip_height": hip_height,
            "reference_provenance": "scripted: quintic CoM transfer in double support, "
            "half-sine swing height, static KKT force references",
        },
    )


def _layout(phase: ContactPhase):
    return [(2 * j, 2 * j + 1) for j in range(len(phase.contacts))]
