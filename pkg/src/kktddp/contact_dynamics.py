"""Rigid-contact forward dynamics through the KKT system of Gauss's principle.

Sign convention: contact forces enter as ``M vdot = tau_b + J_c^T lam`` with
``tau_b = S tau - b``, i.e. the saddle system

    [M    J_c^T] [ vdot]   [ tau_b      ]
    [J_c  0    ] [ -lam] = [ -Jdot_c v  ]

is solved through its dual Schur complement ``(J_c M^-1 J_c^T + damping I)``
so that rank-deficient contact Jacobians (duplicated contacts) stay solvable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import (
    GRAVITY,
    ContactPoint,
    KinematicTree,
    State,
    bias_forces,
    contact_acceleration,
    contact_jacobian,
    integrate_state,
    inverse_dynamics,
    jdot_v,
    mass_matrix,
    rigid_body_terms,
)

DEFAULT_DAMPING = 1e-8
_CSTEP = 1e-20


class ModelDegeneracyError(RuntimeError):
    """The mass matrix could not be factorized."""


class ContactDegeneracyError(RuntimeError):
    """The damped Schur complement of the contact set is numerically singular."""

    def __init__(self, contacts, message="contact Schur complement is singular"):
        super().__init__(f"{message}: {list(contacts)}")
        self.contacts = tuple(contacts)


@dataclass
class KktSolution:
    vdot: np.ndarray
    lam: np.ndarray
    kkt_residual: float
    # factorizations reused by derivatives()
    _M_factor: tuple = field(default=None, repr=False)
    _J: np.ndarray = field(default=None, repr=False)
    _MinvJt: np.ndarray = field(default=None, repr=False)
    _schur_factor: tuple = field(default=None, repr=False)


@dataclass
class DynamicsDerivatives:
    """Jacobians of the discrete step ``x+ = f(x, u)`` and of ``lam = g(x, u)``."""

    f_x: np.ndarray
    f_u: np.ndarray
    g_x: np.ndarray
    g_u: np.ndarray


def _factor_mass(M):
    try:
        return cho_factor(M, check_finite=False)
    except LinAlgError as exc:
        raise ModelDegeneracyError("mass matrix is not positive definite") from exc


def free_acceleration(tree: KinematicTree, state: State, tau, gravity=GRAVITY) -> np.ndarray:
    """Unconstrained acceleration ``M^-1 (S tau - b)``."""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (tree.n_joints,):
        raise ValueError(f"expected {tree.n_joints} joint torques, got shape {tau.shape}")
    M = mass_matrix(tree, state.q)
    tau_b = -bias_forces(tree, state, gravity)
    tau_b[3:] += tau
    return cho_solve(_factor_mass(M), tau_b)


def kkt_solve(
    tree: KinematicTree,
    state: State,
    tau,
    contacts: Sequence[ContactPoint] = (),
    damping: float = DEFAULT_DAMPING,
    gravity=GRAVITY,
) -> KktSolution:
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (tree.n_joints,):
        raise ValueError(f"expected {tree.n_joints} joint torques, got shape {tau.shape}")
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    for c in contacts:
        tree.check_contact(c)
    M, b, J, gamma = rigid_body_terms(tree, state.q, state.v, gravity, contacts)
    tau_b = -b
    tau_b[3:] += tau
    Mf = _factor_mass(M)
    a_free = cho_solve(Mf, tau_b, check_finite=False)
    if not contacts:
        res = float(np.max(np.abs(M @ a_free - tau_b), initial=0.0))
        return KktSolution(a_free, np.zeros(0), res, _M_factor=Mf)

    MinvJt = cho_solve(Mf, J.T, check_finite=False)
    schur = J @ MinvJt
    schur[np.diag_indices_from(schur)] += damping
    try:
        Sf = cho_factor(schur, check_finite=False)
    except LinAlgError as exc:
        raise ContactDegeneracyError(contacts) from exc
    lam = -cho_solve(Sf, J @ a_free + gamma, check_finite=False)
    if not np.all(np.isfinite(lam)):
        raise ContactDegeneracyError(contacts)
    vdot = a_free + MinvJt @ lam
    r1 = M @ vdot - J.T @ lam - tau_b
    r2 = J @ vdot + gamma
    res = float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))
    return KktSolution(vdot, lam, res, Mf, J, MinvJt, Sf)


def gauss_objective(tree: KinematicTree, state: State, vdot, vdot_free) -> float:
    """Half the squared M-norm of the deviation from the free acceleration."""
    d = np.asarray(vdot) - np.asarray(vdot_free)
    return 0.5 * float(d @ mass_matrix(tree, state.q) @ d)


def step(
    tree: KinematicTree,
    state: State,
    tau,
    contacts: Sequence[ContactPoint],
    dt: float,
    damping: float = DEFAULT_DAMPING,
    gravity=GRAVITY,
) -> tuple[State, np.ndarray]:
    """One step of the augmented KKT dynamics: next state and current forces."""
    sol = kkt_solve(tree, state, tau, contacts, damping, gravity)
    return integrate_state(state, sol.vdot, dt), sol.lam


def _kkt_solve_rhs(sol: KktSolution, R1, R2, damping):
    """Apply the inverse of [[M, -J^T], [J, damping I]] to stacked columns."""
    Minv_R1 = cho_solve(sol._M_factor, R1)
    if sol._J is None:
        return Minv_R1, np.zeros((0,) + R1.shape[1:])
    dlam = cho_solve(sol._schur_factor, R2 - sol._J @ Minv_R1)
    return Minv_R1 + sol._MinvJt @ dlam, dlam


def derivatives(
    tree: KinematicTree,
    state: State,
    tau,
    contacts: Sequence[ContactPoint],
    dt: float,
    damping: float = DEFAULT_DAMPING,
    gravity=GRAVITY,
    solution: KktSolution | None = None,
) -> DynamicsDerivatives:
    """Exact first derivatives of ``step`` by implicit differentiation of the KKT system.

    The KKT residual

        r1 = ID(q, v, vdot) - S tau - J(q)^T lam
        r2 = J(q) vdot + Jdot(q, v) v + damping lam

    vanishes at the solution, so ``d(vdot, lam)/dp = -K^-1 dr/dp``. The partials
    of the rigid-body terms with respect to ``(q, v)`` are taken by the complex
    step (exact to roundoff), batched over all 2n directions; the KKT inverse
    reuses the factorizations of the forward solve.
    """
    n, m = tree.nv, tree.n_joints
    sol = solution or kkt_solve(tree, state, tau, contacts, damping, gravity)
    p = sol.lam.size

    eye = np.eye(n)
    Q = np.concatenate([state.q + 1j * _CSTEP * eye, np.broadcast_to(state.q, (n, n))])
    V = np.concatenate([np.broadcast_to(state.v, (n, n)), state.v + 1j * _CSTEP * eye])
    A = np.broadcast_to(sol.vdot, (2 * n, n))
    r1 = inverse_dynamics(tree, Q, V, A, gravity)
    if p:
        Jc = contact_jacobian(tree, Q, contacts)
        r1 = r1 - np.einsum("bpn,p->bn", Jc, sol.lam)
        r2 = contact_acceleration(tree, Q, V, A, contacts)
        dr2 = r2.imag.T / _CSTEP
    else:
        dr2 = np.zeros((0, 2 * n))
    dr1 = r1.imag.T / _CSTEP  # n x 2n

    S = tree.selection_matrix
    R1 = np.concatenate([-dr1, S], axis=1)
    R2 = np.concatenate([-dr2, np.zeros((p, m))], axis=1)
    dvdot, dlam = _kkt_solve_rhs(sol, R1, R2, damping)

    a_x, a_u = dvdot[:, : 2 * n], dvdot[:, 2 * n :]
    dv_x = dt * a_x
    dv_x[:, n:] += eye
    dv_u = dt * a_u
    dq_x = dt * dv_x
    dq_x[:, :n] += eye
    f_x = np.vstack([dq_x, dv_x])
    f_u = np.vstack([dt * dv_u, dv_u])
    return DynamicsDerivatives(f_x, f_u, dlam[:, : 2 * n], dlam[:, 2 * n :])


def derivatives_batch(
    tree: KinematicTree,
    q,
    v,
    tau,
    contacts: Sequence[ContactPoint],
    dt: float,
    damping: float = DEFAULT_DAMPING,
    gravity=GRAVITY,
) -> DynamicsDerivatives:
    """``derivatives`` for a stack of B states sharing one contact set.

    Inputs have shapes (B, n), (B, n) and (B, nj); every block of the result
    carries the leading batch dimension. The KKT systems are re-solved here
    with batched dense solves instead of reusing per-state factorizations.
    """
    q, v = np.asarray(q, dtype=float), np.asarray(v, dtype=float)
    tau = np.asarray(tau, dtype=float)
    B, n = q.shape
    m = tree.n_joints
    if damping < 0:
        raise ValueError("damping must be nonnegative")
    M = mass_matrix(tree, q)
    tau_b = -inverse_dynamics(tree, q, v, np.zeros_like(v), gravity)
    tau_b[:, 3:] += tau
    a_free = np.linalg.solve(M, tau_b[..., None])[..., 0]
    p = sum(c.dim for c in contacts)
    if p:
        J = contact_jacobian(tree, q, contacts)
        gamma = contact_acceleration(tree, q, v, np.zeros_like(v), contacts)
        MinvJt = np.linalg.solve(M, np.swapaxes(J, 1, 2))
        schur = J @ MinvJt + damping * np.eye(p)
        lam = -np.linalg.solve(schur, (J @ a_free[..., None]) + gamma[..., None])[..., 0]
        vdot = a_free + (MinvJt @ lam[..., None])[..., 0]
    else:
        lam = np.zeros((B, 0))
        vdot = a_free

    eye = np.eye(n)
    Q = np.concatenate(
        [q[:, None, :] + 1j * _CSTEP * eye, np.broadcast_to(q[:, None, :], (B, n, n))], axis=1
    )
    V = np.concatenate(
        [np.broadcast_to(v[:, None, :], (B, n, n)), v[:, None, :] + 1j * _CSTEP * eye], axis=1
    )
    A = np.broadcast_to(vdot[:, None, :], (B, 2 * n, n))
    r1 = inverse_dynamics(tree, Q, V, A, gravity)
    if p:
        Jc = contact_jacobian(tree, Q, contacts)
        r1 = r1 - np.einsum("bkpn,bp->bkn", Jc, lam)
        dr2 = np.swapaxes(contact_acceleration(tree, Q, V, A, contacts).imag, 1, 2) / _CSTEP
    dr1 = np.swapaxes(r1.imag, 1, 2) / _CSTEP  # B x n x 2n

    R1 = np.concatenate([-dr1, np.broadcast_to(tree.selection_matrix, (B, n, m))], axis=2)
    Minv_R1 = np.linalg.solve(M, R1)
    if p:
        R2 = np.concatenate([-dr2, np.zeros((B, p, m))], axis=2)
        dlam = np.linalg.solve(schur, R2 - J @ Minv_R1)
        dvdot = Minv_R1 + MinvJt @ dlam
    else:
        dlam = np.zeros((B, 0, 2 * n + m))
        dvdot = Minv_R1

    dv_x = dt * dvdot[:, :, : 2 * n]
    dv_x[:, :, n:] += eye
    dv_u = dt * dvdot[:, :, 2 * n :]
    dq_x = dt * dv_x
    dq_x[:, :, :n] += eye
    return DynamicsDerivatives(
        np.concatenate([dq_x, dv_x], axis=1),
        np.concatenate([dt * dv_u, dv_u], axis=1),
        dlam[:, :, : 2 * n],
        dlam[:, :, 2 * n :],
    )


def kkt_matrices(
    tree: KinematicTree, state: State, tau, contacts: Sequence[ContactPoint], gravity=GRAVITY
) -> dict:
    """Blocks of the KKT system at a state, for debug dumps."""
    M = mass_matrix(tree, state.q)
    tau_b = -bias_forces(tree, state, gravity)
    tau_b[3:] += np.asarray(tau, dtype=float)
    J = contact_jacobian(tree, state.q, contacts)
    gamma = jdot_v(tree, state, contacts) if contacts else np.zeros(0)
    p = J.shape[0]
    K = np.block([[M, J.T], [J, np.zeros((p, p))]])
    return {"M": M, "J_c": J, "tau_b": tau_b, "Jdot_v": gamma, "kkt": K}
