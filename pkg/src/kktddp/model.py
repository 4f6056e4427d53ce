"""Planar articulated rigid-body model with a free-floating base.

Coordinates
-----------
The plane is spanned by ``x`` (horizontal, forward) and ``z`` (vertical, up);
angles are counter-clockwise. A configuration is the flat vector

    q = (x_base, z_base, theta_base, joint_1, ..., joint_nj)

and the generalized velocity ``v`` has the same layout (base linear velocity is
expressed in the world frame). Angles live on the real line, so the tangent
space of SE(2) x R^nj is identified with R^n and ``q + dt * v`` is the exact
exponential update used by the integrator.

Spatial vectors are 3-vectors ``(omega, v_x, v_z)`` for motion and
``(n, f_x, f_z)`` for force, expressed in the world frame about the world
origin. All kernels accept arbitrary leading batch dimensions and complex
inputs so that derivative code can differentiate them with the complex step.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

GRAVITY = np.array([0.0, -9.81])

_DIM_INDEX = {"tangential": 0, "normal": 1}


class ModelError(ValueError):
    """Raised for malformed models, states or contact descriptions."""


@dataclass(frozen=True)
class Link:
    """A rigid link attached to its parent by a revolute joint.

    ``placement`` is the planar transform (rotation, translation) of the joint
    frame in the parent frame. For the base link it is ignored.
    """

    name: str
    mass: float
    com_offset: tuple[float, float]
    inertia: float
    parent: int
    placement: tuple[float, tuple[float, float]] = (0.0, (0.0, 0.0))
    limits: tuple[float, float] | None = None


@dataclass(frozen=True)
class ContactPoint:
    link: int
    offset: tuple[float, float] = (0.0, 0.0)
    constrained_dims: tuple[str, ...] = ("tangential", "normal")

    @property
    def dim(self) -> int:
        return len(self.constrained_dims)

    @property
    def rows(self) -> list[int]:
        return [_DIM_INDEX[d] for d in self.constrained_dims]


@dataclass(frozen=True)
class KinematicTree:
    links: tuple[Link, ...]
    contacts: dict[str, ContactPoint] = field(default_factory=dict)
    name: str = "robot"

    def __post_init__(self):
        if not self.links:
            raise ModelError("a tree needs at least a base link")
        for i, link in enumerate(self.links):
            if not link.mass > 0:
                raise ModelError(f"link {link.name!r}: mass must be positive")
            if link.inertia < 0:
                raise ModelError(f"link {link.name!r}: inertia must be nonnegative")
            if i == 0 and link.parent != -1:
                raise ModelError("base link must have parent -1")
            if i > 0 and not 0 <= link.parent < i:
                raise ModelError(f"link {link.name!r}: parent index must precede the link")
            if link.limits is not None and not link.limits[0] < link.limits[1]:
                raise ModelError(f"link {link.name!r}: lower limit must be below upper")
        for name, c in self.contacts.items():
            self.check_contact(c, name)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_joints(self) -> int:
        return len(self.links) - 1

    @property
    def nv(self) -> int:
        return 3 + self.n_joints

    @property
    def nx(self) -> int:
        return 2 * self.nv

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links))

    @property
    def actuation_selector(self) -> np.ndarray:
        mask = np.ones(self.nv, dtype=bool)
        mask[:3] = False
        return mask

    @property
    def selection_matrix(self) -> np.ndarray:
        """The n x nj matrix ``S`` mapping joint torques to generalized forces."""
        S = np.zeros((self.nv, self.n_joints))
        S[3:, :] = np.eye(self.n_joints)
        return S

    def link_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            if not 0 <= name_or_index < self.n_links:
                raise ModelError(f"link index {name_or_index} out of range")
            return int(name_or_index)
        for i, link in enumerate(self.links):
            if link.name == name_or_index:
                return i
        raise ModelError(f"unknown link {name_or_index!r}")

    def check_contact(self, contact: ContactPoint, label: str = "contact") -> None:
        if not 0 <= contact.link < self.n_links:
            raise ModelError(f"{label}: link index {contact.link} out of range")
        if not contact.constrained_dims:
            raise ModelError(f"{label}: needs at least one constrained dimension")
        for d in contact.constrained_dims:
            if d not in _DIM_INDEX:
                raise ModelError(f"{label}: unknown constrained dimension {d!r}")

    def supports(self, k: int) -> list[int]:
        """Velocity indices whose motion moves link ``k`` (base first)."""
        dofs = []
        while k > 0:
            dofs.append(2 + k)
            k = self.links[k].parent
        return [0, 1, 2] + dofs[::-1]

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n_joints, -np.inf)
        hi = np.full(self.n_joints, np.inf)
        for j, link in enumerate(self.links[1:]):
            if link.limits is not None:
                lo[j], hi[j] = link.limits
        return lo, hi

    def neutral(self) -> np.ndarray:
        return np.zeros(self.nv)


@dataclass
class State:
    """Configuration ``q`` and generalized velocity ``v`` (both length n)."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.q.shape != self.v.shape or self.q.ndim != 1 or self.q.size < 3:
            raise ModelError("State needs q and v of equal length n >= 3")

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.v])

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])


# ---------------------------------------------------------------------------
# spatial algebra kernels (batched over leading dims)


def _rot(angle, vec):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * vec[0] - s * vec[1], s * vec[0] + c * vec[1]], axis=-1)


def _cross_motion(m1, m2):
    w1, x1, z1 = m1[..., 0], m1[..., 1], m1[..., 2]
    w2, x2, z2 = m2[..., 0], m2[..., 1], m2[..., 2]
    zero = np.zeros_like(w1 * w2)
    return np.stack([zero, z1 * w2 - w1 * z2, w1 * x2 - x1 * w2], axis=-1)


def _cross_force(m, f):
    w, x, z = m[..., 0], m[..., 1], m[..., 2]
    _n, fx, fz = f[..., 0], f[..., 1], f[..., 2]
    return np.stack([x * fz - z * fx, -w * fz, w * fx], axis=-1)


def _apply_inertia(mass, hx, hz, I_o, m):
    """Spatial inertia (mass, first moment h, rotational inertia about origin) times m."""
    w, x, z = m[..., 0], m[..., 1], m[..., 2]
    return np.stack(
        [I_o * w - hz * x + hx * z, -hz * w + mass * x, hx * w + mass * z], axis=-1
    )


@dataclass
class _Kinematics:
    angle: list  # per link (...,)
    origin: list  # per link (..., 2)
    com: list  # per link (..., 2)
    subspace: list  # per velocity index (..., 3)


def _kinematics(tree: KinematicTree, q) -> _Kinematics:
    q = np.asarray(q)
    if q.ndim == 1 and not np.iscomplexobj(q):
        return _kinematics_single(tree, q)
    angle, origin, com = [], [], []
    for k, link in enumerate(tree.links):
        if k == 0:
            phi = q[..., 2]
            p = np.stack([q[..., 0], q[..., 1]], axis=-1)
        else:
            rot, trans = link.placement
            pp = link.parent
            p = origin[pp] + _rot(angle[pp], np.asarray(trans, dtype=float))
            phi = angle[pp] + rot + q[..., 2 + k]
        angle.append(phi)
        origin.append(p)
        com.append(p + _rot(phi, np.asarray(link.com_offset, dtype=float)))
    ones = np.ones_like(q[..., 0])
    zeros = np.zeros_like(q[..., 0])
    subspace = [
        np.stack([zeros, ones, zeros], axis=-1),
        np.stack([zeros, zeros, ones], axis=-1),
        np.stack([ones, origin[0][..., 1], -origin[0][..., 0]], axis=-1),
    ]
    for k in range(1, tree.n_links):
        subspace.append(np.stack([ones, origin[k][..., 1], -origin[k][..., 0]], axis=-1))
    return _Kinematics(angle, origin, com, subspace)


def _kinematics_single(tree: KinematicTree, q) -> _Kinematics:
    """``_kinematics`` for one real configuration, with scalar arithmetic."""
    data, _ = _flat(tree)
    qs = q.tolist()
    angle, origin, com = [], [], []
    for k, (p, rot, tx, tz, dx, dz, _, _) in enumerate(data):
        if k == 0:
            phi, px, pz = qs[2], qs[0], qs[1]
        else:
            c, s = math.cos(angle[p]), math.sin(angle[p])
            ox, oz = origin[p]
            px, pz = ox + c * tx - s * tz, oz + s * tx + c * tz
            phi = angle[p] + rot + qs[2 + k]
        c, s = math.cos(phi), math.sin(phi)
        angle.append(phi)
        origin.append((px, pz))
        com.append((px + c * dx - s * dz, pz + s * dx + c * dz))
    subspace = [np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])]
    subspace += [np.array([1.0, oz, -ox]) for ox, oz in origin]
    return _Kinematics(
        [np.float64(a) for a in angle],
        [np.array(o) for o in origin],
        [np.array(c) for c in com],
        subspace,
    )


def _link_inertias(tree, kin):
    out = []
    for link, c in zip(tree.links, kin.com):
        m = link.mass
        cx, cz = c[..., 0], c[..., 1]
        out.append((m, m * cx, m * cz, link.inertia + m * (cx * cx + cz * cz)))
    return out


def _velocities(tree, kin, v):
    S = kin.subspace
    V = [S[0] * v[..., 0, None] + S[1] * v[..., 1, None] + S[2] * v[..., 2, None]]
    for k in range(1, tree.n_links):
        V.append(V[tree.links[k].parent] + S[2 + k] * v[..., 2 + k, None])
    return V


def _accelerations(tree, kin, V, v, a):
    """Spatial link accelerations for generalized acceleration ``a``."""
    S = kin.subspace
    zeros = np.zeros_like(v[..., 0] * kin.angle[0])
    # the base rotation axis moves with the base translation
    sdot = np.stack([zeros, v[..., 1], -v[..., 0]], axis=-1)
    A = [
        S[0] * a[..., 0, None]
        + S[1] * a[..., 1, None]
        + S[2] * a[..., 2, None]
        + sdot * v[..., 2, None]
    ]
    for k in range(1, tree.n_links):
        p = tree.links[k].parent
        d = 2 + k
        A.append(A[p] + S[d] * a[..., d, None] + _cross_motion(V[p], S[d]) * v[..., d, None])
    return A


def _rnea(tree, q, v, a, gravity):
    """Inverse dynamics M(q) a + b(q, v); also returns kinematic intermediates."""
    q, v, a = np.asarray(q), np.asarray(v), np.asarray(a)
    kin = _kinematics(tree, q)
    V = _velocities(tree, kin, v)
    A = _accelerations(tree, kin, V, v, a)
    g = np.array([0.0, gravity[0], gravity[1]])
    inert = _link_inertias(tree, kin)
    f = []
    for k in range(tree.n_links):
        Iv = _apply_inertia(*inert[k], V[k])
        f.append(_apply_inertia(*inert[k], A[k] - g) + _cross_force(V[k], Iv))
    for k in range(tree.n_links - 1, 0, -1):
        f[tree.links[k].parent] = f[tree.links[k].parent] + f[k]
    S = kin.subspace
    tau = [np.sum(S[i] * f[0], axis=-1) for i in range(3)]
    tau += [np.sum(S[2 + k] * f[k], axis=-1) for k in range(1, tree.n_links)]
    return np.stack(tau, axis=-1), kin, V, A


def _point_world(kin, contact: ContactPoint):
    return kin.origin[contact.link] + _rot(
        kin.angle[contact.link], np.asarray(contact.offset, dtype=float)
    )


def _point_jacobian(tree, kin, link, P):
    """2 x n Jacobian of the world velocity of world point P fixed on ``link``."""
    shape = P.shape[:-1] + (2, tree.nv)
    J = np.zeros(shape, dtype=P.dtype)
    Px, Pz = P[..., 0], P[..., 1]
    for d in tree.supports(link):
        s = kin.subspace[d]
        J[..., 0, d] = s[..., 1] - s[..., 0] * Pz
        J[..., 1, d] = s[..., 2] + s[..., 0] * Px
    return J


def _point_velocity(Vk, P):
    w = Vk[..., 0]
    return np.stack([Vk[..., 1] - w * P[..., 1], Vk[..., 2] + w * P[..., 0]], axis=-1)


def _point_acceleration(Vk, Ak, P):
    w, al = Vk[..., 0], Ak[..., 0]
    vP = _point_velocity(Vk, P)
    return np.stack(
        [
            Ak[..., 1] - al * P[..., 1] - w * vP[..., 1],
            Ak[..., 2] + al * P[..., 0] + w * vP[..., 0],
        ],
        axis=-1,
    )


def _select_rows(vec2, contact):
    return vec2[..., contact.rows]


# ---------------------------------------------------------------------------
# public operations


def mass_matrix(tree: KinematicTree, q) -> np.ndarray:
    """Joint-space inertia matrix by the composite-rigid-body algorithm."""
    q = np.asarray(q)
    kin = _kinematics(tree, q)
    comp = [list(t) for t in _link_inertias(tree, kin)]
    for k in range(tree.n_links - 1, 0, -1):
        p = tree.links[k].parent
        comp[p] = [a + b for a, b in zip(comp[p], comp[k])]
    n = tree.nv
    M = np.zeros(q.shape[:-1] + (n, n), dtype=q.dtype if np.iscomplexobj(q) else float)
    S = kin.subspace
    owner = [0, 0, 0] + list(range(1, tree.n_links))
    for d in range(n):
        k = owner[d]
        F = _apply_inertia(*comp[k], S[d])
        for e in tree.supports(k):
            if e > d and owner[e] == k:
                continue
            val = np.sum(S[e] * F, axis=-1)
            M[..., d, e] = val
            M[..., e, d] = val
    return M


_FLAT: dict = {}


def _flat(tree: KinematicTree):
    """Per-tree constants as Python floats for the single-state kernel."""
    hit = _FLAT.get(id(tree))
    if hit is not None and hit[0] is tree:
        return hit[1]
    data = [
        (lk.parent, lk.placement[0], float(lk.placement[1][0]), float(lk.placement[1][1]),
         float(lk.com_offset[0]), float(lk.com_offset[1]), lk.mass, lk.inertia)
        for lk in tree.links
    ]
    supports = [tree.supports(k) for k in range(tree.n_links)]
    _FLAT[id(tree)] = (tree, (data, supports))
    return data, supports


def rigid_body_terms(tree: KinematicTree, q, v, gravity=GRAVITY, contacts=()):
    """``M``, ``b``, ``J_c`` and ``Jdot_c v`` at a single real state.

    Same quantities as ``mass_matrix``, ``bias_forces``, ``contact_jacobian`` and
    ``jdot_v``, computed in one sweep with scalar arithmetic. This is the hot
    path of simulation rollouts; the batched kernels remain the general route.
    """
    data, supports = _flat(tree)
    q = [float(x) for x in q]
    v = [float(x) for x in v]
    n, L = len(q), len(data)
    ang, ox, oz = [0.0] * L, [0.0] * L, [0.0] * L
    inert = []
    for k, (p, rot, tx, tz, dx, dz, m, I) in enumerate(data):
        if k == 0:
            phi, px, pz = q[2], q[0], q[1]
        else:
            c, s = math.cos(ang[p]), math.sin(ang[p])
            px, pz = ox[p] + c * tx - s * tz, oz[p] + s * tx + c * tz
            phi = ang[p] + rot + q[2 + k]
        ang[k], ox[k], oz[k] = phi, px, pz
        c, s = math.cos(phi), math.sin(phi)
        cx, cz = px + c * dx - s * dz, pz + s * dx + c * dz
        inert.append((m, m * cx, m * cz, I + m * (cx * cx + cz * cz)))
    S = [(0.0, 1.0, 0.0), (0.0, 0.0, 1.0)] + [(1.0, oz[k], -ox[k]) for k in range(L)]
    owner = [0, 0, 0] + list(range(1, L))

    def apply(Ik, w, x, z):
        m, hx, hz, Io = Ik
        return Io * w - hz * x + hx * z, -hz * w + m * x, hx * w + m * z

    # velocities and zero-acceleration link accelerations
    V = [(v[2], v[0] + v[2] * oz[0], v[1] - v[2] * ox[0])]
    A = [(0.0, v[1] * v[2], -v[0] * v[2])]
    for k in range(1, L):
        p, d = data[k][0], 2 + k
        w1, x1, z1 = V[p]
        w2, x2, z2 = S[d]
        V.append((w1 + v[d], x1 + x2 * v[d], z1 + z2 * v[d]))
        A.append((A[p][0], A[p][1] + (z1 * w2 - w1 * z2) * v[d],
                  A[p][2] + (w1 * x2 - x1 * w2) * v[d]))
    gx, gz = float(gravity[0]), float(gravity[1])
    f = []
    for k in range(L):
        w, x, z = V[k]
        nI, fxI, fzI = apply(inert[k], w, x, z)
        a0, a1, a2 = apply(inert[k], A[k][0], A[k][1] - gx, A[k][2] - gz)
        f.append([a0 + x * fzI - z * fxI, a1 - w * fzI, a2 + w * fxI])
    comp = [list(Ik) for Ik in inert]
    for k in range(L - 1, 0, -1):
        p = data[k][0]
        f[p] = [a + b for a, b in zip(f[p], f[k])]
        comp[p] = [a + b for a, b in zip(comp[p], comp[k])]
    b = np.empty(n)
    M = np.zeros((n, n))
    for d in range(n):
        k = owner[d]
        sd = S[d]
        fk = f[k]
        b[d] = sd[0] * fk[0] + sd[1] * fk[1] + sd[2] * fk[2]
        F = apply(comp[k], *sd)
        for e in supports[k]:
            if e > d:
                break
            se = S[e]
            M[d, e] = M[e, d] = se[0] * F[0] + se[1] * F[1] + se[2] * F[2]

    rows_J, rows_g = [], []
    for c in contacts:
        k = c.link
        cs, sn = math.cos(ang[k]), math.sin(ang[k])
        Px = ox[k] + cs * c.offset[0] - sn * c.offset[1]
        Pz = oz[k] + sn * c.offset[0] + cs * c.offset[1]
        Jp = np.zeros((2, n))
        for d in supports[k]:
            s0, s1, s2 = S[d]
            Jp[0, d] = s1 - s0 * Pz
            Jp[1, d] = s2 + s0 * Px
        w, x, z = V[k]
        al, ax_, az_ = A[k]
        vx, vz = x - w * Pz, z + w * Px
        acc = (ax_ - al * Pz - w * vz, az_ + al * Px + w * vx)
        for r in c.rows:
            rows_J.append(Jp[r])
            rows_g.append(acc[r])
    J = np.array(rows_J) if rows_J else np.zeros((0, n))
    return M, b, J, np.array(rows_g)


def inverse_dynamics(tree: KinematicTree, q, v, a, gravity=GRAVITY) -> np.ndarray:
    return _rnea(tree, q, v, a, gravity)[0]


def bias_forces(tree: KinematicTree, state: State, gravity=GRAVITY) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms ``b`` with ``M vdot = S tau - b``."""
    return _rnea(tree, state.q, state.v, np.zeros_like(state.v), gravity)[0]


def point_position(tree: KinematicTree, q, contact: ContactPoint) -> np.ndarray:
    return _point_world(_kinematics(tree, q), contact)


def point_velocity(tree: KinematicTree, q, v, contact: ContactPoint) -> np.ndarray:
    kin = _kinematics(tree, q)
    V = _velocities(tree, kin, np.asarray(v))
    return _point_velocity(V[contact.link], _point_world(kin, contact))


def point_jacobian(tree: KinematicTree, q, contact: ContactPoint) -> np.ndarray:
    kin = _kinematics(tree, q)
    return _point_jacobian(tree, kin, contact.link, _point_world(kin, contact))


def contact_jacobian(
    tree: KinematicTree, q, contacts: Sequence[ContactPoint]
) -> np.ndarray:
    """Stacked constrained rows of the contact-point Jacobians, in contact order."""
    q = np.asarray(q)
    if not contacts:
        return np.zeros(q.shape[:-1] + (0, tree.nv))
    kin = _kinematics(tree, q)
    blocks = []
    for c in contacts:
        tree.check_contact(c)
        J = _point_jacobian(tree, kin, c.link, _point_world(kin, c))
        blocks.append(J[..., c.rows, :])
    return np.concatenate(blocks, axis=-2)


def contact_acceleration(tree, q, v, a, contacts) -> np.ndarray:
    """Constrained components of contact-point accelerations, ``J a + Jdot v``."""
    q, v, a = np.asarray(q), np.asarray(v), np.asarray(a)
    if not contacts:
        return np.zeros(q.shape[:-1] + (0,))
    kin = _kinematics(tree, q)
    V = _velocities(tree, kin, v)
    A = _accelerations(tree, kin, V, v, a)
    out = []
    for c in contacts:
        tree.check_contact(c)
        P = _point_world(kin, c)
        out.append(_point_acceleration(V[c.link], A[c.link], P)[..., c.rows])
    return np.concatenate(out, axis=-1)


def jdot_v(tree: KinematicTree, state: State, contacts: Sequence[ContactPoint]) -> np.ndarray:
    """Contact-point acceleration bias ``Jdot_c v``."""
    return contact_acceleration(tree, state.q, state.v, np.zeros_like(state.v), contacts)


def link_angle(tree: KinematicTree, q, link: int):
    return _kinematics(tree, q).angle[link]


def angle_jacobian(tree: KinematicTree, link: int) -> np.ndarray:
    row = np.zeros(tree.nv)
    row[[d for d in tree.supports(link) if d >= 2]] = 1.0
    return row


def com(tree: KinematicTree, q) -> np.ndarray:
    kin = _kinematics(tree, q)
    total = sum(link.mass * c for link, c in zip(tree.links, kin.com))
    return total / tree.total_mass


def com_jacobian(tree: KinematicTree, q) -> np.ndarray:
    kin = _kinematics(tree, q)
    J = 0.0
    for k, link in enumerate(tree.links):
        J = J + link.mass * _point_jacobian(tree, kin, k, kin.com[k])
    return J / tree.total_mass


def com_acceleration(tree: KinematicTree, q, v, a) -> np.ndarray:
    """World acceleration of the center of mass for generalized acceleration ``a``."""
    q, v, a = np.asarray(q), np.asarray(v), np.asarray(a)
    kin = _kinematics(tree, q)
    V = _velocities(tree, kin, v)
    A = _accelerations(tree, kin, V, v, a)
    total = sum(
        link.mass * _point_acceleration(V[k], A[k], kin.com[k])
        for k, link in enumerate(tree.links)
    )
    return total / tree.total_mass


def centroidal_angular_momentum(tree: KinematicTree, state: State) -> float:
    """Out-of-plane angular momentum about the center of mass."""
    kin = _kinematics(tree, state.q)
    V = _velocities(tree, kin, state.v)
    h = sum(_apply_inertia(*I, Vk) for I, Vk in zip(_link_inertias(tree, kin), V))
    c = sum(link.mass * ck for link, ck in zip(tree.links, kin.com)) / tree.total_mass
    return h[..., 0] - (c[..., 0] * h[..., 2] - c[..., 1] * h[..., 1])


def kinetic_energy(tree: KinematicTree, state: State) -> float:
    M = mass_matrix(tree, state.q)
    return 0.5 * state.v @ M @ state.v


def potential_energy(tree: KinematicTree, q, gravity=GRAVITY) -> float:
    return -tree.total_mass * float(np.dot(gravity, com(tree, q)))


def integrate_state(state: State, vdot, dt: float) -> State:
    """Semi-implicit Euler: velocity first, then configuration with the new velocity."""
    if not dt > 0:
        raise ModelError("time step must be positive")
    v = state.v + dt * np.asarray(vdot)
    return State(state.q + dt * v, v)


def state_difference(a: State, b: State) -> np.ndarray:
    """Tangent vector ``b - a`` (length 2n) such that ``a (+) d = b``."""
    if a.q.shape != b.q.shape:
        raise ModelError("state dimension mismatch")
    return np.concatenate([b.q - a.q, b.v - a.v])


def state_integrate(a: State, d) -> State:
    """Retraction ``a (+) d`` for a tangent vector ``d`` of length 2n."""
    d = np.asarray(d, dtype=float)
    n = a.q.size
    if d.size != 2 * n:
        raise ModelError("tangent dimension mismatch")
    return State(a.q + d[:n], a.v + d[n:])


# ---------------------------------------------------------------------------
# model description files


def _contact_from_dict(tree_links, d) -> ContactPoint:
    link = d["link"]
    if isinstance(link, str):
        names = [lk.name for lk in tree_links]
        if link not in names:
            raise ModelError(f"contact refers to unknown link {link!r}")
        link = names.index(link)
    return ContactPoint(
        link=int(link),
        offset=tuple(float(x) for x in d.get("offset", (0.0, 0.0))),
        constrained_dims=tuple(d.get("dims", ("tangential", "normal"))),
    )


def tree_from_dict(data: dict) -> KinematicTree:
    """Build a tree from the JSON model schema (see README)."""
    try:
        links = []
        names = []
        for i, d in enumerate(data["links"]):
            parent = d.get("parent", -1 if i == 0 else None)
            if isinstance(parent, str):
                if parent not in names:
                    raise ModelError(f"link {d['name']!r}: unknown parent {parent!r}")
                parent = names.index(parent)
            if parent is None:
                raise ModelError(f"link {d['name']!r}: missing parent")
            pl = d.get("placement", {})
            limits = d.get("limits")
            links.append(
                Link(
                    name=str(d["name"]),
                    mass=float(d["mass"]),
                    com_offset=tuple(float(x) for x in d.get("com", (0.0, 0.0))),
                    inertia=float(d["inertia"]),
                    parent=int(parent),
                    placement=(
                        float(pl.get("angle", 0.0)),
                        tuple(float(x) for x in pl.get("translation", (0.0, 0.0))),
                    ),
                    limits=None if limits is None else (float(limits[0]), float(limits[1])),
                )
            )
            names.append(links[-1].name)
        contacts = {
            name: _contact_from_dict(links, c) for name, c in data.get("contacts", {}).items()
        }
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model description: {exc!r}") from exc
    tree = KinematicTree(tuple(links), contacts, name=str(data.get("name", "robot")))
    mask = data.get("actuation")
    if mask is not None and list(map(bool, mask)) != list(tree.actuation_selector):
        raise ModelError("actuation mask must select exactly the joint coordinates")
    return tree


def tree_to_dict(tree: KinematicTree) -> dict:
    links = []
    for link in tree.links:
        d = {
            "name": link.name,
            "mass": link.mass,
            "com": list(link.com_offset),
            "inertia": link.inertia,
            "parent": link.parent,
            "placement": {"angle": link.placement[0], "translation": list(link.placement[1])},
        }
        if link.limits is not None:
            d["limits"] = list(link.limits)
        links.append(d)
    contacts = {
        name: {"link": c.link, "offset": list(c.offset), "dims": list(c.constrained_dims)}
        for name, c in tree.contacts.items()
    }
    return {
        "name": tree.name,
        "links": links,
        "contacts": contacts,
        "actuation": [bool(b) for b in tree.actuation_selector],
    }


def load_model(path) -> KinematicTree:
    with open(path) as fh:
        return tree_from_dict(json.load(fh))


_DATA = Path(__file__).parent / "data"


def builtin_model(name: str) -> KinematicTree:
    """Load one of the shipped models (``walker`` or ``astronaut``)."""
    path = _DATA / f"{name}.json"
    if not path.exists():
        raise ModelError(f"no built-in model named {name!r}")
    return load_model(path)
