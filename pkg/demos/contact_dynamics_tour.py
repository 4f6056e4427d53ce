"""
Contact dynamics as a KKT system
================================

Builds the planar walker, pins both feet, and solves for the constrained
acceleration and contact forces. Then checks the answer three ways: the KKT
residual, Gauss's least-constraint objective, and finite differences of the
step derivatives.
"""

import numpy as np

from kktddp.contact_dynamics import derivatives, free_acceleration, gauss_objective, kkt_solve, step
from kktddp.model import State, builtin_model, contact_jacobian, mass_matrix
from kktddp.scenarios import load_scenario, static_forces

tree = builtin_model("walker")
feet = [tree.contacts["left_foot"], tree.contacts["right_foot"]]
print(f"walker: {tree.n_links} links, {tree.nv} dofs, {tree.total_mass:.1f} kg")

# the balanced double-support posture the standing scenario starts from
q = load_scenario("standing").x0[:tree.nv]
state = State(q, np.zeros(tree.nv))

# the least-torque static equilibrium, then the undamped KKT solve it implies
tau, lam = static_forces(tree, q, feet, np.array([0.0, -9.81]))
sol = kkt_solve(tree, state, tau, feet, damping=0.0)
print("static torques   ", np.round(tau, 3))
print("contact forces   ", np.round(sol.lam, 3), f"(weight {tree.total_mass * 9.81:.2f} N)")
print(f"KKT residual      {sol.kkt_residual:.2e}")
print(f"max |acceleration| {np.abs(sol.vdot).max():.2e}")

# Gauss: among accelerations that respect the contacts, the solution is closest
# to the free acceleration in the mass metric
rng = np.random.default_rng(0)
tau = tau + rng.normal(0, 5, tree.n_joints)
sol = kkt_solve(tree, state, tau, feet)
a0 = free_acceleration(tree, state, tau)
J = contact_jacobian(tree, q, feet)
null = np.linalg.svd(J)[2][J.shape[0]:].T
best = gauss_objective(tree, state, sol.vdot, a0)
worse = [gauss_objective(tree, state, sol.vdot + null @ rng.normal(size=null.shape[1]), a0)
         for _ in range(200)]
print(f"Gauss objective {best:.4f}; best of 200 feasible alternatives {min(worse):.4f}")

# step derivatives by implicit differentiation against central differences
dt, h = 0.01, 1e-6
state = State(q + rng.normal(0, 0.05, tree.nv), rng.normal(0, 0.5, tree.nv))
D = derivatives(tree, state, tau, feet, dt)
fd = np.zeros_like(D.f_u)
for k in range(tree.n_joints):
    e = np.zeros(tree.n_joints)
    e[k] = h
    xp = step(tree, state, tau + e, feet, dt)[0].x
    xm = step(tree, state, tau - e, feet, dt)[0].x
    fd[:, k] = (xp - xm) / (2 * h)
print(f"f_u vs central differences: max abs error {np.abs(D.f_u - fd).max():.2e}")
print(f"mass matrix condition number {np.linalg.cond(mass_matrix(tree, state.q)):.1f}")
