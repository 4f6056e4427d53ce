from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..contact_dynamics import (
    DEFAULT_DAMPING,
    DynamicsDerivatives,
    derivatives,
    derivatives_batch,
    kkt_solve,
)
from ..costs import CostConfigError, CostTerm, evaluate, term_values
from ..ddp import SolverSettings
from ..model import GRAVITY, KinematicTree, ModelError, State, integrate_state

PHASE_KINDS = ("double_support", "single_support", "flight")


class ScenarioError(ValueError):
    """A scenario violates one of its consistency rules."""


@dataclass(frozen=True)
class ContactPhase:
    contacts: tuple[str, ...]
    duration: int
    kind: str

    def __post_init__(self):
        object.__setattr__(self, "contacts", tuple(self.contacts))
        if self.kind not in PHASE_KINDS:
            raise ScenarioError(f"unknown phase kind {self.kind!r}")
        if int(self.duration) < 1:
            raise ScenarioError("phase duration must be at least one step")
        if self.kind == "flight" and self.contacts:
            raise ScenarioError("a flight phase has no contacts")


@dataclass
class Scenario:
    """An optimal-control problem over prescribed contact phases.

    ``references`` holds the scripted reference signals (CoM, feet, posture,
    force and torque references); ``metadata`` records the builder parameters,
    weights and reference provenance.
    """

    name: str
    tree: KinematicTree
    phases: list[ContactPhase]
    dt: float
    x0: np.ndarray
    running: list[CostTerm]
    terminal: list[CostTerm] = field(default_factory=list)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    settings: SolverSettings = field(default_factory=SolverSettings)
    damping: float = DEFAULT_DAMPING
    references: dict = field(default_factory=dict)
    initial_guess: str | np.ndarray = "zeros"
    metadata: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return sum(p.duration for p in self.phases)

    @property
    def nu(self) -> int:
        return self.tree.n_joints

    def phase_index(self, i: int) -> int:
        t = 0
        for j, p in enumerate(self.phases):
            t += p.duration
            if i < t:
                return j
        return len(self.phases) - 1

    def phase_bounds(self) -> list[tuple[int, int]]:
        out, t = [], 0
        for p in self.phases:
            out.append((t, t + p.duration))
            t += p.duration
        return out

    def contact_names(self, i: int) -> tuple[str, ...]:
        return self.phases[self.phase_index(i)].contacts

    def contacts(self, i: int):
        return tuple(self.tree.contacts[n] for n in self.contact_names(i))

    def force_layout(self, i: int) -> list[tuple[int, int]]:
        """(tangential, normal) index pairs into the force vector of step ``i``."""
        pairs, off = [], 0
        for c in self.contacts(i):
            if c.constrained_dims == ("tangential", "normal"):
                pairs.append((off, off + 1))
            off += c.dim
        return pairs

    def force_size(self, i: int) -> int:
        return sum(c.dim for c in self.contacts(i))

    def validate(self) -> list[str]:
        """All violated invariants, as human-readable messages (empty when valid)."""
        errors = []
        if not self.dt > 0:
            errors.append("dt: must be positive")
        if not self.phases:
            errors.append("phases: at least one phase is required")
        for j, p in enumerate(self.phases):
            for name in p.contacts:
                if name not in self.tree.contacts:
                    errors.append(f"phases[{j}]: unknown contact {name!r}")
        declared = self.metadata.get("horizon")
        if declared is not None and int(declared) != self.horizon:
            errors.append(
                f"horizon: phase durations sum to {self.horizon}, declared {declared}"
            )
        if np.asarray(self.x0).shape != (self.tree.nx,):
            errors.append(f"initial_state: expected {self.tree.nx} entries")
        if errors:
            return errors
        N = self.horizon
        for key, ref in self.references.items():
            if key in ("force", "torque") and len(ref) < N:
                errors.append(f"references.{key}: defined for {len(ref)} of {N} steps")
            elif key not in ("force", "torque") and np.ndim(ref) == 2 and len(ref) < N + 1:
                errors.append(f"references.{key}: defined for {len(ref)} of {N + 1} states")
        x = np.asarray(self.x0, dtype=float)
        u = np.zeros(self.nu)
        for term in self.running:
            if term.window is not None and term.window[1] > N + 1:
                errors.append(f"costs.{term.name}: window {term.window} exceeds horizon {N}")
                continue
            for i in range(N) if term.kind in ("force_tracking", "friction_cone") else [0]:
                if not term.active(i):
                    continue
                try:
                    evaluate([term], x, u, np.zeros(self.force_size(i)), i)
                except (CostConfigError, ModelError, IndexError, ValueError) as exc:
                    errors.append(f"costs.{term.name}: step {i}: {exc}")
                    break
        for term in self.terminal:
            try:
                evaluate([term], x, np.zeros(0), np.zeros(0), N, terminal=True)
            except (CostConfigError, ModelError, IndexError, ValueError) as exc:
                errors.append(f"costs.{term.name}: {exc}")
        return errors

    def check(self) -> "Scenario":
        errors = self.validate()
        if errors:
            raise ScenarioError("; ".join(errors))
        return self


class ScenarioProblem:
    """Adapter exposing a scenario to the DDP solver."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.tree = scenario.tree
        self.horizon = scenario.horizon
        self.x0 = np.asarray(scenario.x0, dtype=float)
        self.nx = self.tree.nx
        self.nu = self.tree.n_joints
        self._contacts = [scenario.contacts(i) for i in range(self.horizon)]

    def _state(self, x):
        n = self.tree.nv
        return State(x[:n], x[n:])

    def dynamics(self, i, x, u):
        sc = self.scenario
        s = self._state(x)
        sol = kkt_solve(self.tree, s, u, self._contacts[i], sc.damping, sc.gravity)
        return integrate_state(s, sol.vdot, sc.dt).x, sol.lam

    def derivatives(self, i, x, u):
        sc = self.scenario
        return derivatives(self.tree, self._state(x), u, self._contacts[i], sc.dt, sc.damping,
                           sc.gravity)

    def derivatives_all(self, X, U) -> list[DynamicsDerivatives]:
        """Derivatives along a whole trajectory, batched phase by phase."""
        sc = self.scenario
        n = self.tree.nv
        X = np.asarray(X)
        out = []
        for j, (a, b) in enumerate(sc.phase_bounds()):
            D = derivatives_batch(self.tree, X[a:b, :n], X[a:b, n:], U[a:b], self._contacts[a],
                                  sc.dt, sc.damping, sc.gravity)
            out += [DynamicsDerivatives(D.f_x[k], D.f_u[k], D.g_x[k], D.g_u[k])
                    for k in range(b - a)]
        return out

    def running_cost(self, i, x, u, lam):
        return evaluate(self.scenario.running, x, u, lam, i)

    def running_value(self, i, x, u, lam):
        return sum(t.value(i, x, u, lam) for t in self.scenario.running if t.active(i))

    def terminal_cost(self, x):
        return evaluate(self.scenario.terminal, x, np.zeros(0), np.zeros(0), self.horizon,
                        terminal=True)

    def terminal_value(self, x):
        N = self.horizon
        return sum(t.value(N, x, np.zeros(0), np.zeros(0)) for t in self.scenario.terminal)

    def difference(self, xa, xb):
        return xb - xa

    def cost_breakdown(self, X, U, Lam) -> dict:
        out: dict = {}
        for i in range(self.horizon):
            for k, v in term_values(self.scenario.running, X[i], U[i], Lam[i], i).items():
                out[k] = out.get(k, 0.0) + v
        for k, v in term_values(self.scenario.terminal, X[-1], np.zeros(0), np.zeros(0),
                                self.horizon, terminal=True).items():
            out[k] = out.get(k, 0.0) + v
        return out


def total_cost(scenario: Scenario, X, U, Lam) -> float:
    """Independent re-evaluation of the trajectory cost (running plus final).

    Sums per step, then over steps, then adds the final cost, the same grouping
    as the solver, so equal trajectories give bit-identical costs.
    """
    total = 0.0
    for i in range(scenario.horizon):
        step = 0.0
        for term in scenario.running:
            if term.active(i):
                res = term.residual(i, X[i], U[i], Lam[i])
                step += 0.5 * float(res.r @ term.weigh(res.r))
        total += step
    final = 0.0
    for term in scenario.terminal:
        res = term.residual(scenario.horizon, X[-1], np.zeros(0), np.zeros(0))
        final += 0.5 * float(res.r @ term.weigh(res.r))
    total = total + final
    return total
