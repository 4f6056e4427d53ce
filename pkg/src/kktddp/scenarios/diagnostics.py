"""Per-step diagnostics of a trajectory: forces, torques, momentum and residuals."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..model import (
    State,
    centroidal_angular_momentum,
    com,
    contact_jacobian,
    inverse_dynamics,
    point_position,
    point_velocity,
)
from .problem import Scenario


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else format(float(x), ".17g")


def knee_joints(tree) -> list[int]:
    """Joint indices whose link hangs below another actuated link (knees on a leg chain)."""
    return [k - 1 for k in range(1, tree.n_links) if tree.links[k].parent > 0]


@dataclass
class DiagnosticsReport:
    """Per-step series; index ``i`` of the step arrays refers to the interval ``[i, i+1)``.

    ``normal_force`` maps each contact name to its normal force per step (NaN
    while the contact is inactive). ``angular_momentum``, ``com`` and
    ``com_error`` are sampled at all ``N + 1`` states. ``dynamics_residual`` is
    the infinity norm of ``M vdot + b - S tau - J^T lam`` with ``vdot`` taken
    from the discrete velocity update, and ``contact_velocity`` is the largest
    world velocity of an active contact point at the start of the step.
    """

    time: np.ndarray
    phase: np.ndarray
    kind: list
    normal_force: dict
    knee_torque: dict
    com: np.ndarray
    com_error: np.ndarray | None
    angular_momentum: np.ndarray
    dynamics_residual: np.ndarray
    contact_velocity: np.ndarray
    stance_drift: list = field(default_factory=list)  # (phase, contact, drift in m)

    @property
    def total_normal_force(self) -> np.ndarray:
        if not self.normal_force:
            return np.zeros(len(self.phase))
        return np.nansum(np.column_stack(list(self.normal_force.values())), axis=1)

    def peak_normal_force(self, contact: str | None = None) -> float:
        """Largest normal force over the horizon (one contact, or any contact)."""
        series = [self.normal_force[contact]] if contact else list(self.normal_force.values())
        vals = [np.nanmax(s) for s in series if np.any(~np.isnan(s))]
        return float(max(vals)) if vals else 0.0

    @property
    def max_stance_drift(self) -> float:
        return max((d for _, _, d in self.stance_drift), default=0.0)

    @property
    def angular_momentum_deviation(self) -> float:
        return float(np.max(np.abs(self.angular_momentum - self.angular_momentum[0])))

    def summary(self) -> dict:
        out = {
            "peak_normal_force": self.peak_normal_force(),
            "peak_normal_force_by_contact": {
                c: self.peak_normal_force(c) for c in self.normal_force
            },
            "max_stance_drift": self.max_stance_drift,
            "angular_momentum_deviation": self.angular_momentum_deviation,
            "max_dynamics_residual": float(np.max(self.dynamics_residual, initial=0.0)),
            "max_contact_velocity": float(np.max(self.contact_velocity, initial=0.0)),
        }
        if self.com_error is not None:
            out["max_com_error"] = float(np.max(np.linalg.norm(self.com_error, axis=1)))
        return out

    def write_csv(self, path) -> None:
        """One row per state ``i = 0..N``; step quantities are empty on the last row."""
        N = len(self.phase)
        contacts = list(self.normal_force)
        knees = list(self.knee_torque)
        header = (
            ["step", "time", "phase", "kind"]
            + [f"normal_force_{c}" for c in contacts]
            + ["normal_force_total"]
            + [f"knee_torque_{k}" for k in knees]
            + ["com_x", "com_z", "com_error_x", "com_error_z", "angular_momentum",
               "angular_momentum_deviation", "dynamics_residual", "contact_velocity"]
        )
        total = self.total_normal_force
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for i in range(N + 1):
                step = i < N
                row = [i, _fmt(self.time[i])]
                row += [int(self.phase[i]), self.kind[i]] if step else ["", ""]
                row += [_fmt(self.normal_force[c][i]) if step else "" for c in contacts]
                row += [_fmt(total[i]) if step else ""]
                row += [_fmt(self.knee_torque[k][i]) if step else "" for k in knees]
                row += [_fmt(self.com[i, 0]), _fmt(self.com[i, 1])]
                if self.com_error is None:
                    row += ["", ""]
                else:
                    row += [_fmt(self.com_error[i, 0]), _fmt(self.com_error[i, 1])]
                row += [_fmt(self.angular_momentum[i]),
                        _fmt(self.angular_momentum[i] - self.angular_momentum[0])]
                row += [_fmt(self.dynamics_residual[i]), _fmt(self.contact_velocity[i])] \
                    if step else ["", ""]
                w.writerow(row)


def diagnostics(scenario: Scenario, X, U, Lam) -> DiagnosticsReport:
    """Evaluate the report for a trajectory ``(X, U, Lam)`` of ``scenario``."""
    tree, dt = scenario.tree, scenario.dt
    n = tree.nv
    N = scenario.horizon
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    names = list(tree.contacts)
    normal = {c: np.full(N, np.nan) for c in names}
    knees = {tree.links[j + 1].name: U[:, j].copy() for j in knee_joints(tree)}
    phase = np.array([scenario.phase_index(i) for i in range(N)], dtype=int)
    kind = [scenario.phases[j].kind for j in phase]
    dyn_res = np.zeros(N)
    cvel = np.zeros(N)
    S = tree.selection_matrix
    for i in range(N):
        q, v = X[i, :n], X[i, n:]
        contacts = scenario.contacts(i)
        lam = np.asarray(Lam[i], dtype=float)
        off = 0
        force = np.zeros(n)
        for cname in scenario.contact_names(i):
            c = tree.contacts[cname]
            seg = lam[off: off + c.dim]
            if "normal" in c.constrained_dims:
                normal[cname][i] = seg[c.constrained_dims.index("normal")]
            off += c.dim
        if contacts:
            force = contact_jacobian(tree, q, contacts).T @ lam
            cvel[i] = max(float(np.max(np.abs(point_velocity(tree, q, v, c)))) for c in contacts)
        vdot = (X[i + 1, n:] - v) / dt
        dyn_res[i] = float(np.max(np.abs(
            inverse_dynamics(tree, q, v, vdot, scenario.gravity) - S @ U[i] - force
        )))

    C = np.array([com(tree, x[:n]) for x in X])
    ref = scenario.references.get("com")
    com_err = None
    if ref is not None and np.ndim(ref) == 2 and len(ref) == N + 1:
        com_err = C - np.asarray(ref, dtype=float)
    am = np.array([centroidal_angular_momentum(tree, State(x[:n], x[n:])) for x in X])

    drift = []
    for j, (a, b) in enumerate(scenario.phase_bounds()):
        for cname in scenario.phases[j].contacts:
            c = tree.contacts[cname]
            p = np.array([point_position(tree, X[i, :n], c) for i in range(a, b + 1)])
            drift.append((j, cname, float(np.max(np.linalg.norm(p - p[0], axis=1)))))

    return DiagnosticsReport(
        time=np.arange(N + 1) * dt,
        phase=phase,
        kind=kind,
        normal_force=normal,
        knee_torque=knees,
        com=C,
        com_error=com_err,
        angular_momentum=am,
        dynamics_residual=dyn_res,
        contact_velocity=cvel,
        stance_drift=drift,
    )
