"""Residual cost terms with exact gradients and Gauss-Newton Hessians.

Each term is ``0.5 * r^T W r`` for a residual ``r(x, u, lam)`` with Jacobians
``r_x``, ``r_u``, ``r_lam``. Gradients are ``r_*^T W r`` and Hessians
``r_a^T W r_b``. Terms depend either on ``(x, u)`` or on ``lam`` alone, which is
what the force-aware backward pass assumes (no ``l_x,lam`` cross block).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import (
    ContactPoint,
    KinematicTree,
    angle_jacobian,
    com,
    com_jacobian,
    link_angle,
    point_jacobian,
    point_position,
    point_velocity,
)

KINDS = (
    "com_tracking",
    "frame_tracking",
    "force_tracking",
    "control_reg",
    "state_reg",
    "joint_limit_barrier",
    "orientation_goal",
    "friction_cone",
)


class CostConfigError(ValueError):
    """Inconsistent cost definition, raised while the problem is built."""


@dataclass
class Residual:
    r: np.ndarray
    r_x: np.ndarray | None = None
    r_u: np.ndarray | None = None
    r_lam: np.ndarray | None = None


@dataclass
class CostTerm:
    """A weighted residual active on a window of steps (or on the final state).

    ``weight`` is either a k x k PSD matrix or a float for an isotropic weight
    (used when the residual size varies with the contact set).
    """

    name: str
    kind: str
    residual: Callable[[int, np.ndarray, np.ndarray, np.ndarray], Residual]
    weight: np.ndarray | float
    window: tuple[int, int] | None = None
    terminal: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CostConfigError(f"unknown cost kind {self.kind!r}")
        if np.ndim(self.weight) == 0:
            if not self.weight >= 0:
                raise CostConfigError(f"{self.name}: weight must be nonnegative")
            self.weight = float(self.weight)
        else:
            W = np.asarray(self.weight, dtype=float)
            if W.ndim != 2 or W.shape[0] != W.shape[1]:
                raise CostConfigError(f"{self.name}: weight must be square")
            if not np.allclose(W, W.T) or np.linalg.eigvalsh(W).min() < -1e-12:
                raise CostConfigError(f"{self.name}: weight must be symmetric PSD")
            self.weight = W
        if self.window is not None:
            a, b = self.window
            if not 0 <= a <= b:
                raise CostConfigError(f"{self.name}: bad window {self.window}")

    def active(self, i: int) -> bool:
        return self.window is None or self.window[0] <= i < self.window[1]

    def weigh(self, r):
        return self.weight * r if isinstance(self.weight, float) else self.weight @ r

    def value(self, i, x, u, lam) -> float:
        res = self.residual(i, x, u, lam)
        return 0.5 * float(res.r @ self.weigh(res.r))


@dataclass
class CostExpansion:
    value: float
    l_x: np.ndarray
    l_u: np.ndarray
    l_lam: np.ndarray
    l_xx: np.ndarray
    l_uu: np.ndarray
    l_ux: np.ndarray
    l_lamlam: np.ndarray

    @classmethod
    def zeros(cls, nx, nu, nl):
        return cls(
            0.0,
            np.zeros(nx),
            np.zeros(nu),
            np.zeros(nl),
            np.zeros((nx, nx)),
            np.zeros((nu, nu)),
            np.zeros((nu, nx)),
            np.zeros((nl, nl)),
        )


def _expand_into(out: CostExpansion, term: CostTerm, res: Residual):
    Wr = term.weigh(res.r)
    out.value += 0.5 * float(res.r @ Wr)
    if isinstance(term.weight, float):
        W = term.weight * np.eye(res.r.size)
    else:
        W = term.weight
    if W.shape[0] != res.r.size:
        raise CostConfigError(f"{term.name}: residual size {res.r.size} does not match weight")
    if res.r_x is not None:
        out.l_x += res.r_x.T @ Wr
        WJx = W @ res.r_x
        out.l_xx += res.r_x.T @ WJx
        if res.r_u is not None:
            out.l_ux += res.r_u.T @ WJx
    if res.r_u is not None:
        out.l_u += res.r_u.T @ Wr
        out.l_uu += res.r_u.T @ W @ res.r_u
    if res.r_lam is not None:
        out.l_lam += res.r_lam.T @ Wr
        out.l_lamlam += res.r_lam.T @ W @ res.r_lam


def evaluate(
    terms: Sequence[CostTerm], x, u, lam, step_index: int, terminal: bool = False
) -> CostExpansion:
    """Sum of the active terms and their Gauss-Newton expansion at one step."""
    x, u, lam = (np.asarray(a, dtype=float) for a in (x, u, lam))
    out = CostExpansion.zeros(x.size, u.size, lam.size)
    for term in terms:
        if term.terminal != terminal or (not terminal and not term.active(step_index)):
            continue
        _expand_into(out, term, term.residual(step_index, x, u, lam))
    return out


def term_values(terms: Sequence[CostTerm], x, u, lam, step_index, terminal=False) -> dict:
    out = {}
    for term in terms:
        if term.terminal != terminal or (not terminal and not term.active(step_index)):
            continue
        out[term.name] = out.get(term.name, 0.0) + term.value(step_index, x, u, lam)
    return out


# ---------------------------------------------------------------------------
# residual primitives


def joint_limit_barrier(q, lower, upper, margin, stiffness):
    """One-sided ramp residual: zero inside ``[lower+margin, upper-margin]``.

    Its square is a quadratic penalty that is C1 at the band edges.
    """
    q = np.asarray(q, dtype=float)
    below = np.maximum(0.0, (np.asarray(lower) + margin) - q)
    above = np.maximum(0.0, q - (np.asarray(upper) - margin))
    return stiffness * (below + above)


def _barrier_slope(q, lower, upper, margin, stiffness):
    q = np.asarray(q, dtype=float)
    slope = np.zeros_like(q)
    slope[q < np.asarray(lower) + margin] = -stiffness
    slope[q > np.asarray(upper) - margin] = stiffness
    return slope


def force_tracking(lam, lam_ref):
    lam, lam_ref = np.asarray(lam, dtype=float), np.asarray(lam_ref, dtype=float)
    if lam.shape != lam_ref.shape:
        raise CostConfigError(
            f"force reference has shape {lam_ref.shape}, contact forces {lam.shape}"
        )
    return lam - lam_ref


def _ref_at(ref, i):
    ref = np.asarray(ref, dtype=float)
    if ref.ndim == 1:
        return ref
    return ref[min(i, len(ref) - 1)]


def _weight(w, k):
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return float(w) * np.eye(k)
    if w.ndim == 1:
        if w.size != k:
            raise CostConfigError(f"weight vector has {w.size} entries, residual has {k}")
        return np.diag(w)
    return w


# ---------------------------------------------------------------------------
# term factories


def com_tracking_term(tree, reference, weight, window=None, terminal=False, name="com"):
    nx = tree.nx

    def fn(i, x, u, lam):
        q = x[: tree.nv]
        Jx = np.zeros((2, nx))
        Jx[:, : tree.nv] = com_jacobian(tree, q)
        return Residual(com(tree, q) - _ref_at(reference, i), r_x=Jx)

    return CostTerm(name, "com_tracking", fn, _weight(weight, 2), window, terminal,
                    {"reference": np.asarray(reference)})


def _point_velocity_q_jacobian(tree, q, v, contact, h=1e-20):
    n = q.size
    Q = q + 1j * h * np.eye(n)
    V = np.broadcast_to(v, (n, n))
    return point_velocity(tree, Q, V, contact).imag.T / h


def frame_tracking_term(
    tree: KinematicTree,
    contact: ContactPoint,
    reference,
    weight,
    velocity_reference=None,
    window=None,
    terminal=False,
    name="frame",
):
    """Track the world position (and optionally velocity) of a point on a link."""
    n = tree.nv
    k = 2 if velocity_reference is None else 4

    def fn(i, x, u, lam):
        q, v = x[:n], x[n:]
        J = point_jacobian(tree, q, contact)
        r = point_position(tree, q, contact) - _ref_at(reference, i)
        Jx = np.zeros((k, 2 * n))
        Jx[:2, :n] = J
        if velocity_reference is not None:
            rv = J @ v - _ref_at(velocity_reference, i)
            r = np.concatenate([r, rv])
            Jx[2:, :n] = _point_velocity_q_jacobian(tree, q, v, contact)
            Jx[2:, n:] = J
        return Residual(r, r_x=Jx)

    params = {"link": contact.link, "offset": list(contact.offset),
              "reference": np.asarray(reference)}
    if velocity_reference is not None:
        params["velocity_reference"] = np.asarray(velocity_reference)
    return CostTerm(name, "frame_tracking", fn, _weight(weight, k), window, terminal, params)


def force_tracking_term(references: Sequence, weight: float, window=None, name="force"):
    """``references[i]`` is the reference force vector for step ``i``."""
    refs = [np.asarray(r, dtype=float) for r in references]

    def fn(i, x, u, lam):
        r = force_tracking(lam, refs[i])
        return Residual(r, r_lam=np.eye(r.size))

    return CostTerm(name, "force_tracking", fn, float(weight), window, False,
                    {"reference": refs})


def control_reg_term(nu, weight, reference=None, window=None, name="control"):
    ref = np.zeros(nu) if reference is None else reference

    def fn(i, x, u, lam):
        return Residual(u - _ref_at(ref, i), r_u=np.eye(nu))

    return CostTerm(name, "control_reg", fn, _weight(weight, nu), window, False,
                    {"reference": np.asarray(ref)})


def state_reg_term(nx, reference, weight, window=None, terminal=False, name="state"):
    def fn(i, x, u, lam):
        # angles live on the real line, so the tangent difference is a plain subtraction
        return Residual(x - _ref_at(reference, i), r_x=np.eye(nx))

    return CostTerm(name, "state_reg", fn, _weight(weight, nx), window, terminal,
                    {"reference": np.asarray(reference)})


def joint_limit_barrier_term(tree, lower=None, upper=None, margin=0.05, stiffness=10.0,
                             window=None, terminal=False, name="limits"):
    lo_default, hi_default = tree.joint_limits()
    lower = lo_default if lower is None else np.asarray(lower, dtype=float)
    upper = hi_default if upper is None else np.asarray(upper, dtype=float)
    if np.any(lower >= upper):
        raise CostConfigError("joint limits need lower < upper")
    nj, n = tree.n_joints, tree.nv

    def fn(i, x, u, lam):
        qj = x[3:n]
        Jx = np.zeros((nj, 2 * n))
        Jx[:, 3:n] = np.diag(_barrier_slope(qj, lower, upper, margin, stiffness))
        return Residual(joint_limit_barrier(qj, lower, upper, margin, stiffness), r_x=Jx)

    return CostTerm(name, "joint_limit_barrier", fn, np.eye(nj), window, terminal,
                    {"lower": lower, "upper": upper, "margin": margin, "stiffness": stiffness})


def orientation_goal_term(tree, link, target, weight, window=None, terminal=True,
                          name="orientation"):
    """Absolute link angle goal; the residual is a real-line angle difference."""
    row = np.zeros((1, tree.nx))
    row[0, : tree.nv] = angle_jacobian(tree, link)

    def fn(i, x, u, lam):
        ang = link_angle(tree, x[: tree.nv], link)
        return Residual(np.array([ang - _ref_at(np.atleast_1d(target), i)[0]]), r_x=row)

    return CostTerm(name, "orientation_goal", fn, _weight(weight, 1), window, terminal,
                    {"link": link, "target": np.atleast_1d(target)})


def friction_cone_term(layouts: Sequence, mu: float, weight: float, window=None,
                       name="friction"):
    """Penalty on ``|lam_t| > mu lam_n``.

    ``layouts[i]`` lists ``(tangential_index, normal_index)`` pairs into the
    force vector of step ``i``.
    """
    layouts = [list(map(tuple, lay)) for lay in layouts]

    def fn(i, x, u, lam):
        pairs = layouts[i]
        r = np.zeros(2 * len(pairs))
        Jl = np.zeros((r.size, lam.size))
        for j, (t, nrm) in enumerate(pairs):
            for s, row in ((1.0, 2 * j), (-1.0, 2 * j + 1)):
                val = s * lam[t] - mu * lam[nrm]
                if val > 0:
                    r[row] = val
                    Jl[row, t] = s
                    Jl[row, nrm] = -mu
        return Residual(r, r_lam=Jl)

    return CostTerm(name, "friction_cone", fn, float(weight), window, False,
                    {"mu": mu, "layouts": layouts})
