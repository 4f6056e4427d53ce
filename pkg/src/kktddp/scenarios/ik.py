"""Instantaneous inverse-kinematics / inverse-dynamics tracking baseline.

At every step the baseline solves one weighted least-squares problem over
``z = (vdot, tau, lam)`` subject to the contact dynamics

    M vdot - S tau - J^T lam = -b,      J vdot = -Jdot v,

where each running cost term of the scenario becomes a task: kinematic terms
ask for a PD acceleration toward their reference (residual in acceleration
units, so tracking dominates the torque and force regularizers), torque and
force terms ask for their references directly. The law looks only at the current state and
the current references, so it has no preview of final-state goals. The torques
are then applied with the same contact dynamics that DDP uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contact_dynamics import step
from ..model import (
    ContactPoint,
    State,
    angle_jacobian,
    com,
    com_acceleration,
    com_jacobian,
    contact_acceleration,
    link_angle,
    point_jacobian,
    point_position,
    point_velocity,
    rigid_body_terms,
)
from .problem import Scenario

KP = 100.0
KD = 20.0


@dataclass
class IkResult:
    X: np.ndarray
    U: np.ndarray
    Lam: list
    fallback_steps: list  # steps where the constrained solve fell back to lstsq

    @property
    def used_fallback(self) -> bool:
        return bool(self.fallback_steps)


def _ref(ref, i):
    ref = np.asarray(ref, dtype=float)
    return ref if ref.ndim == 1 else ref[min(i, len(ref) - 1)]


def _ref_rate(ref, i, dt):
    ref = np.asarray(ref, dtype=float)
    if ref.ndim == 1 or len(ref) < 2:
        return np.zeros(ref.shape[-1])
    j = min(i, len(ref) - 2)
    return (ref[j + 1] - ref[j]) / dt


def _diag(W, k):
    """Diagonal of a term weight; a float weight is isotropic over ``k`` rows."""
    if isinstance(W, float):
        return np.full(k, W)
    return np.diag(W).copy()


def _tasks(scenario: Scenario, i, q, v, nz, n, nj, p, kp, kd):
    """Rows ``(A, c, w)`` of the weighted least-squares objective."""
    tree, dt = scenario.tree, scenario.dt
    rows = []
    iv = slice(0, n)
    for term in scenario.running:
        if not term.active(i):
            continue
        P = term.params
        if term.kind == "com_tracking":
            ref = P["reference"]
            c_ref, cd_ref = _ref(ref, i), _ref_rate(ref, i, dt)
            cdd_ref = (_ref_rate(ref, i + 1, dt) - cd_ref) / dt
            Jc = com_jacobian(tree, q)
            bias = com_acceleration(tree, q, v, np.zeros(n))
            target = cdd_ref + kp * (c_ref - com(tree, q)) + kd * (cd_ref - Jc @ v)
            A = np.zeros((2, nz))
            A[:, iv] = Jc
            rows.append((A, target - bias, _diag(term.weight, 2)))
        elif term.kind == "frame_tracking":
            pt = ContactPoint(P["link"], tuple(P["offset"]))
            p_ref = _ref(P["reference"], i)
            vel = P.get("velocity_reference")
            if vel is not None:
                v_ref = _ref(vel, i)
                a_ref = (_ref(vel, i + 1) - v_ref) / dt
            else:
                v_ref = _ref_rate(P["reference"], i, dt)
                a_ref = (_ref_rate(P["reference"], i + 1, dt) - v_ref) / dt
            J = point_jacobian(tree, q, pt)
            bias = contact_acceleration(tree, q, v, np.zeros(n), [pt])
            target = a_ref + kp * (p_ref - point_position(tree, q, pt)) + kd * (
                v_ref - point_velocity(tree, q, v, pt)
            )
            w = _diag(term.weight, 2)
            A = np.zeros((2, nz))
            A[:, iv] = J
            rows.append((A, target - bias, w[:2] + (w[2:4] if w.size > 2 else 0)))
        elif term.kind == "state_reg":
            ref = _ref(P["reference"], i)
            w = _diag(term.weight, 2 * n)
            target = kp * (ref[:n] - q) + kd * (ref[n:] - v)
            A = np.zeros((n, nz))
            A[:, iv] = np.eye(n)
            rows.append((A, target, w[:n] + w[n:]))
        elif term.kind == "orientation_goal":
            row = angle_jacobian(tree, P["link"])
            target = kp * (_ref(P["target"], i)[0] - link_angle(tree, q, P["link"])) - kd * (
                row @ v
            )
            A = np.zeros((1, nz))
            A[0, iv] = row
            rows.append((A, np.array([target]), _diag(term.weight, 1)))
        elif term.kind == "control_reg":
            A = np.zeros((nj, nz))
            A[:, n : n + nj] = np.eye(nj)
            rows.append((A, _ref(P["reference"], i), _diag(term.weight, nj)))
        elif term.kind == "force_tracking" and p:
            A = np.zeros((p, nz))
            A[:, n + nj :] = np.eye(p)
            rows.append((A, P["reference"][i], np.full(p, term.weight)))
        # barrier and friction penalties have no instantaneous task form here
    return rows


def ik_control(scenario: Scenario, i, state: State, kp=KP, kd=KD, ridge=1e-9):
    """Torques of the instantaneous tracking law at step ``i``; returns ``(tau, fallback)``."""
    tree = scenario.tree
    n, nj = tree.nv, tree.n_joints
    contacts = scenario.contacts(i)
    M, b, J, gamma = rigid_body_terms(tree, state.q, state.v, scenario.gravity, contacts)
    p = J.shape[0]
    nz = n + nj + p
    rows = _tasks(scenario, i, state.q, state.v, nz, n, nj, p, kp, kd)
    A = np.vstack([r[0] for r in rows]) if rows else np.zeros((0, nz))
    c = np.concatenate([r[1] for r in rows]) if rows else np.zeros(0)
    w = np.concatenate([r[2] for r in rows]) if rows else np.zeros(0)
    E = np.zeros((n + p, nz))
    E[:n, :n] = M
    E[:n, n : n + nj] = -tree.selection_matrix
    E[:n, n + nj :] = -J.T
    E[n:, :n] = J
    e = np.concatenate([-b, -gamma])
    H = A.T @ (w[:, None] * A) + ridge * np.eye(nz)
    g = A.T @ (w * c)
    K = np.block([[H, E.T], [E, np.zeros((n + p, n + p))]])
    rhs = np.concatenate([g, e])
    try:
        sol = np.linalg.solve(K, rhs)
        fallback = not np.all(np.isfinite(sol))
    except np.linalg.LinAlgError:
        fallback = True
    if fallback:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[n : n + nj], fallback


def ik_baseline(scenario: Scenario, kp: float = KP, kd: float = KD) -> IkResult:
    """Roll the instantaneous tracking law forward with the contact dynamics."""
    tree = scenario.tree
    n = tree.nv
    N = scenario.horizon
    X = np.zeros((N + 1, tree.nx))
    U = np.zeros((N, tree.n_joints))
    X[0] = scenario.x0
    Lam, fallback = [], []
    for i in range(N):
        s = State(X[i, :n], X[i, n:])
        U[i], fb = ik_control(scenario, i, s, kp, kd)
        if fb:
            fallback.append(i)
        nxt, lam = step(tree, s, U[i], scenario.contacts(i), scenario.dt, scenario.damping,
                        scenario.gravity)
        X[i + 1] = nxt.x
        Lam.append(lam)
    return IkResult(X, U, Lam, fallback)
