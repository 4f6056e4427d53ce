"""Differential dynamic programming over dynamics that also return contact forces.

The transition of a problem is ``x_{i+1}, lam_i = dynamics(i, x_i, u_i)``; the
running cost may depend on ``lam_i``. The backward pass uses the Gauss-Newton
Q coefficients in which the force Jacobians ``g_x, g_u`` carry the
force-dependent cost derivatives ``l_lam, l_lamlam`` back onto state and control.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .contact_dynamics import ContactDegeneracyError, DynamicsDerivatives, ModelDegeneracyError
from .costs import CostExpansion


class Problem(Protocol):
    horizon: int
    x0: np.ndarray
    nx: int
    nu: int

    def dynamics(self, i: int, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def derivatives(self, i: int, x: np.ndarray, u: np.ndarray) -> DynamicsDerivatives: ...

    def running_cost(self, i, x, u, lam) -> CostExpansion: ...

    def running_value(self, i, x, u, lam) -> float: ...

    def terminal_cost(self, x) -> CostExpansion: ...

    def terminal_value(self, x) -> float: ...

    def difference(self, xa, xb) -> np.ndarray: ...


class RolloutDivergence(RuntimeError):
    """The dynamics failed or produced non-finite values during a rollout."""


@dataclass
class QExpansion:
    Q_x: np.ndarray
    Q_u: np.ndarray
    Q_xx: np.ndarray
    Q_uu: np.ndarray
    Q_ux: np.ndarray


@dataclass
class ValueExpansion:
    V_x: np.ndarray
    V_xx: np.ndarray


@dataclass
class Gains:
    k: np.ndarray
    K: np.ndarray


@dataclass
class SolverSettings:
    max_iterations: int = 100
    alphas: tuple = tuple(2.0 ** -np.arange(11))
    mu_init: float = 1e-9
    mu_min: float = 1e-12
    mu_max: float = 1e6
    mu_increase: float = 10.0
    mu_decrease: float = 0.5
    regularization: str = "quu"
    cost_tolerance: float = 1e-9
    step_tolerance: float = 1e-9
    acceptance: float = 1e-4

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if self.regularization not in ("quu", "vxx"):
            raise ValueError("regularization must be 'quu' or 'vxx'")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if not self.alphas or self.alphas[0] != 1.0 or any(
            b >= a or b <= 0 for a, b in zip(self.alphas, self.alphas[1:])
        ):
            raise ValueError("line-search schedule must start at 1 and strictly decrease")
        if not 0 < self.mu_min <= self.mu_init <= self.mu_max:
            raise ValueError("need 0 < mu_min <= mu_init <= mu_max")
        if self.mu_increase <= 1 or not 0 < self.mu_decrease < 1:
            raise ValueError("mu_increase must exceed 1 and mu_decrease lie in (0, 1)")
        for name in ("cost_tolerance", "step_tolerance", "acceptance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        return d


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    terms: dict
    alpha: float
    mu: float
    grad_norm: float


@dataclass
class SolveTrace:
    records: list[IterationRecord]
    X: np.ndarray
    U: np.ndarray
    Lam: list
    converged: bool
    status: str
    iterations: int
    gains: list = field(default_factory=list, repr=False)

    @property
    def cost(self) -> float:
        return self.records[-1].cost

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    def term_names(self) -> list[str]:
        names: list[str] = []
        for r in self.records:
            names += [n for n in r.terms if n not in names]
        return names

    def normalized_terms(self) -> dict:
        """Each term divided by its iteration-0 value (zero-valued terms stay 0)."""
        out = {}
        for name in self.term_names():
            vals = np.array([r.terms.get(name, 0.0) for r in self.records])
            out[name] = vals / vals[0] if vals[0] != 0 else np.zeros_like(vals)
        return out

    def write_iterations_csv(self, path) -> None:
        names = self.term_names()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["iteration", "cost"] + names + ["alpha", "mu", "grad_norm"])
            for r in self.records:
                w.writerow(
                    [r.iteration, _fmt(r.cost)]
                    + [_fmt(r.terms.get(n, 0.0)) for n in names]
                    + [_fmt(r.alpha), _fmt(r.mu), _fmt(r.grad_norm)]
                )

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "status": self.status,
            "iterations": self.iterations,
            "records": [asdict(r) for r in self.records],
            "X": self.X.tolist(),
            "U": self.U.tolist(),
            "Lam": [np.asarray(lam).tolist() for lam in self.Lam],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------


def q_expansion(
    deriv: DynamicsDerivatives, cost: CostExpansion, next_value: ValueExpansion
) -> QExpansion:
    """Gauss-Newton Q coefficients including the contact-force cost terms."""
    fx, fu, gx, gu = deriv.f_x, deriv.f_u, deriv.g_x, deriv.g_u
    Vx, Vxx = next_value.V_x, next_value.V_xx
    Q_x = cost.l_x + fx.T @ Vx
    Q_u = cost.l_u + fu.T @ Vx
    VxxFx = Vxx @ fx
    Q_xx = cost.l_xx + fx.T @ VxxFx
    Q_uu = cost.l_uu + fu.T @ Vxx @ fu
    Q_ux = cost.l_ux + fu.T @ VxxFx
    if cost.l_lam.size:
        Ll = cost.l_lamlam
        Q_x = Q_x + gx.T @ cost.l_lam
        Q_u = Q_u + gu.T @ cost.l_lam
        Q_xx = Q_xx + gx.T @ Ll @ gx
        Q_uu = Q_uu + gu.T @ Ll @ gu
        Q_ux = Q_ux + gu.T @ Ll @ gx
    return QExpansion(Q_x, Q_u, 0.5 * (Q_xx + Q_xx.T), 0.5 * (Q_uu + Q_uu.T), Q_ux)


@dataclass
class BackwardPassResult:
    ok: bool
    gains: list = field(default_factory=list)
    values: list = field(default_factory=list)
    expected: tuple = (0.0, 0.0)
    grad_norm: float = 0.0
    failed_at: int | None = None


def backward_pass(
    derivs: Sequence[DynamicsDerivatives],
    costs: Sequence[CostExpansion],
    terminal: CostExpansion,
    mu: float = 0.0,
    mode: str = "quu",
) -> BackwardPassResult:
    """Riccati-like sweep from the final step. ``ok=False`` asks for more regularization."""
    N = len(derivs)
    V = ValueExpansion(terminal.l_x.copy(), 0.5 * (terminal.l_xx + terminal.l_xx.T))
    values = [V]
    gains: list[Gains] = [None] * N
    d1 = d2 = 0.0
    gnorm = 0.0
    for i in range(N - 1, -1, -1):
        Q = q_expansion(derivs[i], costs[i], V)
        nu = Q.Q_u.size
        if mode == "quu":
            Quu_r = Q.Q_uu + mu * np.eye(nu)
            Qux_r = Q.Q_ux
        elif mode == "vxx":
            fu, fx = derivs[i].f_u, derivs[i].f_x
            Quu_r = Q.Q_uu + mu * fu.T @ fu
            Qux_r = Q.Q_ux + mu * fu.T @ fx
        else:
            raise ValueError(f"unknown regularization mode {mode!r}")
        try:
            Lf = cho_factor(Quu_r)
        except LinAlgError:
            return BackwardPassResult(False, failed_at=i)
        k = -cho_solve(Lf, Q.Q_u)
        K = -cho_solve(Lf, Qux_r)
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(K))):
            return BackwardPassResult(False, failed_at=i)
        Vx = Q.Q_x + K.T @ Quu_r @ k + K.T @ Q.Q_u + Qux_r.T @ k
        Vxx = Q.Q_xx + K.T @ Quu_r @ K + K.T @ Qux_r + Qux_r.T @ K
        V = ValueExpansion(Vx, 0.5 * (Vxx + Vxx.T))
        values.append(V)
        gains[i] = Gains(k, K)
        d1 += float(k @ Q.Q_u)
        d2 += 0.5 * float(k @ Q.Q_uu @ k)
        gnorm = max(gnorm, float(np.max(np.abs(Q.Q_u), initial=0.0)))
    values.reverse()
    return BackwardPassResult(True, gains, values, (d1, d2), gnorm)


@dataclass
class Rollout:
    X: np.ndarray
    U: np.ndarray
    Lam: list
    cost: float


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise RolloutDivergence("non-finite value in rollout")


def trajectory_cost(problem: Problem, X, U, Lam) -> float:
    J = sum(problem.running_value(i, X[i], U[i], Lam[i]) for i in range(problem.horizon))
    return float(J + problem.terminal_value(X[-1]))


def rollout(problem: Problem, U) -> Rollout:
    """Open-loop simulation of a control sequence from ``problem.x0``."""
    N = problem.horizon
    U = np.asarray(U, dtype=float).reshape(N, problem.nu)
    X = np.zeros((N + 1, problem.nx))
    X[0] = problem.x0
    Lam = []
    for i in range(N):
        try:
            X[i + 1], lam = problem.dynamics(i, X[i], U[i])
        except (ContactDegeneracyError, ModelDegeneracyError, np.linalg.LinAlgError) as exc:
            raise RolloutDivergence(str(exc)) from exc
        _check_finite(X[i + 1], lam)
        Lam.append(lam)
    return Rollout(X, U.copy(), Lam, trajectory_cost(problem, X, U, Lam))


def forward_pass(problem: Problem, X, U, gains: Sequence[Gains], alpha: float,
                 x0=None) -> Rollout:
    """Closed-loop rollout ``u = u_nom + alpha k + K (x_hat - x_nom)``."""
    N = problem.horizon
    Xn = np.zeros_like(X)
    Un = np.zeros_like(U)
    Xn[0] = X[0] if x0 is None else x0
    Lam = []
    for i in range(N):
        g = gains[i]
        Un[i] = U[i] + alpha * g.k + g.K @ problem.difference(X[i], Xn[i])
        try:
            Xn[i + 1], lam = problem.dynamics(i, Xn[i], Un[i])
        except (ContactDegeneracyError, ModelDegeneracyError, np.linalg.LinAlgError) as exc:
            raise RolloutDivergence(str(exc)) from exc
        _check_finite(Un[i], Xn[i + 1], lam)
        Lam.append(lam)
    return Rollout(Xn, Un, Lam, trajectory_cost(problem, Xn, Un, Lam))


def _linearize(problem: Problem, X, U, Lam):
    batch = getattr(problem, "derivatives_all", None)
    if batch is not None:
        derivs = batch(X, U)
    else:
        derivs = [problem.derivatives(i, X[i], U[i]) for i in range(problem.horizon)]
    costs = [problem.running_cost(i, X[i], U[i], Lam[i]) for i in range(problem.horizon)]
    return derivs, costs, problem.terminal_cost(X[-1])


def _breakdown(problem, X, U, Lam) -> dict:
    fn = getattr(problem, "cost_breakdown", None)
    return fn(X, U, Lam) if fn is not None else {}


def solve(
    problem: Problem,
    U0=None,
    settings: SolverSettings | None = None,
    callback: Callable[[IterationRecord], None] | None = None,
) -> SolveTrace:
    """Iterate backward and forward passes with backtracking and adaptive regularization."""
    settings = settings or SolverSettings()
    if U0 is None:
        U0 = np.zeros((problem.horizon, problem.nu))
    cur = rollout(problem, U0)
    mu = settings.mu_init
    rec = IterationRecord(0, cur.cost, _breakdown(problem, cur.X, cur.U, cur.Lam), 0.0, mu,
                          math.nan)
    records = [rec]
    if callback:
        callback(rec)

    converged = False
    status = "max_iterations"
    gains: list = []
    lin = None
    it = 0
    while it < settings.max_iterations:
        it += 1
        if lin is None:
            lin = _linearize(problem, cur.X, cur.U, cur.Lam)
        bp = backward_pass(*lin, mu=mu, mode=settings.regularization)
        if not bp.ok:
            if mu >= settings.mu_max:
                status = "regularization_limit"
                break
            mu = min(max(mu * settings.mu_increase, settings.mu_min), settings.mu_max)
            continue
        gains = bp.gains
        d1, d2 = bp.expected
        kmax = max(float(np.max(np.abs(g.k), initial=0.0)) for g in bp.gains)
        if kmax < settings.step_tolerance or abs(d1 + d2) < settings.cost_tolerance:
            converged, status = True, "converged"
            if math.isnan(records[-1].grad_norm):
                records[-1].grad_norm = bp.grad_norm
            break

        accepted = None
        for alpha in settings.alphas:
            expected = alpha * d1 + alpha * alpha * d2
            if expected >= 0:
                continue
            try:
                trial = forward_pass(problem, cur.X, cur.U, bp.gains, alpha)
            except RolloutDivergence:
                continue
            if (trial.cost - cur.cost) / expected >= settings.acceptance:
                accepted = (alpha, trial)
                break

        if accepted is None:
            if mu >= settings.mu_max:
                status = "line_search_failed"
                break
            mu = min(max(mu * settings.mu_increase, settings.mu_min), settings.mu_max)
            continue

        alpha, trial = accepted
        dJ = cur.cost - trial.cost
        cur = trial
        lin = None
        mu = max(mu * settings.mu_decrease, settings.mu_min)
        rec = IterationRecord(it, cur.cost, _breakdown(problem, cur.X, cur.U, cur.Lam), alpha,
                              mu, bp.grad_norm)
        records.append(rec)
        if callback:
            callback(rec)
        if dJ < settings.cost_tolerance:
            converged, status = True, "converged"
            break

    return SolveTrace(records, cur.X, cur.U, cur.Lam, converged, status, it, gains)


class LinearQuadraticProblem:
    """``x+ = A x + B u`` with cost ``sum 0.5 (x'Qx + u'Ru) + 0.5 x_N' Qf x_N``."""

    def __init__(self, A, B, Q, R, Qf, x0, horizon):
        self.A, self.B = np.asarray(A, float), np.asarray(B, float)
        self.Q, self.R, self.Qf = (np.asarray(m, float) for m in (Q, R, Qf))
        self.x0 = np.asarray(x0, float)
        self.horizon = int(horizon)
        self.nx, self.nu = self.B.shape

    def dynamics(self, i, x, u):
        return self.A @ x + self.B @ u, np.zeros(0)

    def derivatives(self, i, x, u):
        return DynamicsDerivatives(self.A, self.B, np.zeros((0, self.nx)), np.zeros((0, self.nu)))

    def running_value(self, i, x, u, lam):
        return 0.5 * float(x @ self.Q @ x + u @ self.R @ u)

    def running_cost(self, i, x, u, lam):
        return CostExpansion(
            self.running_value(i, x, u, lam),
            self.Q @ x,
            self.R @ u,
            np.zeros(0),
            self.Q,
            self.R,
            np.zeros((self.nu, self.nx)),
            np.zeros((0, 0)),
        )

    def terminal_value(self, x):
        return 0.5 * float(x @ self.Qf @ x)

    def terminal_cost(self, x):
        c = CostExpansion.zeros(self.nx, 0, 0)
        c.value, c.l_x, c.l_xx = self.terminal_value(x), self.Qf @ x, self.Qf
        return c

    def difference(self, xa, xb):
        return xb - xa
