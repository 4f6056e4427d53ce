import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kktddp.contact_dynamics import (
    ContactDegeneracyError,
    derivatives,
    derivatives_batch,
    free_acceleration,
    gauss_objective,
    kkt_matrices,
    kkt_solve,
    step,
)
from kktddp.model import (
    bias_forces,
    contact_jacobian,
    integrate_state,
    jdot_v,
    mass_matrix,
)

from conftest import (
    central_differences,
    full_rank_contacts,
    merge_duplicates,
    random_state,
    random_tree,
    rel_err,
)

seeds = st.integers(0, 2**32 - 1)


def sample(seed, duplicate=False):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, n_contacts=4)
    s = random_state(rng, tree)
    tau = rng.normal(size=tree.n_joints) * 5
    contacts = full_rank_contacts(rng, tree, s.q)
    if duplicate:
        contacts = contacts + contacts[:1]
    return rng, tree, s, tau, contacts


def kkt_residuals(tree, s, tau, contacts, sol, gravity):
    M = mass_matrix(tree, s.q)
    tau_b = -bias_forces(tree, s, gravity)
    tau_b[3:] += tau
    J = contact_jacobian(tree, s.q, contacts)
    r1 = M @ sol.vdot - J.T @ sol.lam - tau_b
    r2 = J @ sol.vdot + jdot_v(tree, s, contacts)
    return r1, r2


@given(seeds)
def test_full_rank_kkt_residual_vanishes(seed):
    rng, tree, s, tau, contacts = sample(seed)
    g = rng.normal(size=2) * 10
    sol = kkt_solve(tree, s, tau, contacts, damping=0.0, gravity=g)
    r1, r2 = kkt_residuals(tree, s, tau, contacts, sol, g)
    assert max(np.abs(r1).max(), np.abs(r2).max(initial=0.0)) <= 1e-8
    assert sol.kkt_residual <= 1e-8


@given(seeds)
def test_duplicated_contact_rows_stay_solvable_with_damping(seed):
    rng, tree, s, tau, contacts = sample(seed, duplicate=True)
    damping = 1e-8
    sol = kkt_solve(tree, s, tau, contacts, damping=damping)
    r1, r2 = kkt_residuals(tree, s, tau, contacts, sol, np.array([0.0, -9.81]))
    assert np.abs(r1).max() <= 1e-8 * (1 + np.abs(sol.lam).max())
    assert np.abs(r2).max() <= damping * np.linalg.norm(sol.lam) * (1 + 1e-6) + 1e-12


@given(seeds)
def test_kkt_acceleration_is_the_mass_weighted_projection(seed):
    rng, tree, s, tau, contacts = sample(seed)
    sol = kkt_solve(tree, s, tau, contacts, damping=0.0)
    M = mass_matrix(tree, s.q)
    J = contact_jacobian(tree, s.q, contacts)
    a0 = free_acceleration(tree, s, tau)
    gamma = jdot_v(tree, s, contacts)
    Minv = np.linalg.inv(M)
    expected = a0 - Minv @ J.T @ np.linalg.solve(J @ Minv @ J.T, J @ a0 + gamma)
    np.testing.assert_allclose(sol.vdot, expected, atol=1e-8, rtol=1e-8)


@given(seeds)
def test_kkt_acceleration_minimizes_the_gauss_objective(seed):
    rng, tree, s, tau, contacts = sample(seed)
    sol = kkt_solve(tree, s, tau, contacts, damping=0.0)
    a0 = free_acceleration(tree, s, tau)
    J = contact_jacobian(tree, s.q, contacts)
    null = np.linalg.svd(J)[2][J.shape[0]:].T if J.size else np.eye(tree.nv)
    best = gauss_objective(tree, s, sol.vdot, a0)
    for _ in range(50):
        trial = sol.vdot + null @ rng.normal(size=null.shape[1])
        assert gauss_objective(tree, s, trial, a0) >= best


def test_contact_free_solve_is_the_free_acceleration(rng):
    tree = random_tree(rng)
    s = random_state(rng, tree)
    tau = rng.normal(size=tree.n_joints)
    sol = kkt_solve(tree, s, tau, ())
    np.testing.assert_allclose(sol.vdot, free_acceleration(tree, s, tau), atol=1e-12)
    assert sol.lam.size == 0


def test_kkt_matrices_reproduce_the_solution(rng):
    _, tree, s, tau, contacts = sample(7)
    sol = kkt_solve(tree, s, tau, contacts, damping=0.0)
    K = kkt_matrices(tree, s, tau, contacts)
    lhs = K["kkt"] @ np.concatenate([sol.vdot, -sol.lam])
    rhs = np.concatenate([K["tau_b"], -K["Jdot_v"]])
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_step_is_semi_implicit_euler_of_the_kkt_acceleration(rng):
    _, tree, s, tau, contacts = sample(3)
    nxt, lam = step(tree, s, tau, contacts, 0.01)
    sol = kkt_solve(tree, s, tau, contacts)
    ref = integrate_state(s, sol.vdot, 0.01)
    np.testing.assert_array_equal(nxt.q, ref.q)
    np.testing.assert_array_equal(lam, sol.lam)


def test_input_errors():
    rng = np.random.default_rng(0)
    tree = random_tree(rng)
    s = random_state(rng, tree)
    with pytest.raises(ValueError):
        kkt_solve(tree, s, np.zeros(tree.n_joints + 1))
    with pytest.raises(ValueError):
        kkt_solve(tree, s, np.zeros(tree.n_joints), damping=-1.0)


def test_singular_contact_set_without_damping_is_reported():
    rng = np.random.default_rng(1)
    tree = random_tree(rng, n_contacts=2)
    s = random_state(rng, tree)
    c = list(tree.contacts.values())[0]
    try:
        sol = kkt_solve(tree, s, np.zeros(tree.n_joints), [c, c, c], damping=0.0)
    except ContactDegeneracyError as exc:
        assert exc.contacts
    else:
        # a numerically nonsingular factorization must still satisfy the constraints
        J = contact_jacobian(tree, s.q, [c, c, c])
        assert np.abs(J @ sol.vdot + jdot_v(tree, s, [c, c, c])).max() < 1e-6


@given(seeds, st.booleans())
def test_derivatives_match_central_differences(seed, duplicate):
    rng, tree, s, tau, contacts = sample(seed, duplicate)
    D = derivatives(tree, s, tau, contacts, 0.01, 1e-8)
    fx, fu, gx, gu = central_differences(tree, s, tau, contacts, 0.01, 1e-8)
    assert rel_err(D.f_x, fx) < 1e-5
    assert rel_err(D.f_u, fu) < 1e-5
    if contacts:
        # with repeated rows only the summed force of each repeated row is determined
        P = merge_duplicates(contacts)
        assert rel_err(P @ D.g_x, P @ gx) < 1e-5
        assert rel_err(P @ D.g_u, P @ gu) < 1e-5


@given(seeds)
def test_batched_derivatives_match_single_state_derivatives(seed):
    rng, tree, _, _, contacts = sample(seed)
    states = [random_state(rng, tree) for _ in range(3)]
    taus = rng.normal(size=(3, tree.n_joints))
    Q = np.stack([s.q for s in states])
    V = np.stack([s.v for s in states])
    B = derivatives_batch(tree, Q, V, taus, contacts, 0.01, 1e-8)
    for k, s in enumerate(states):
        D = derivatives(tree, s, taus[k], contacts, 0.01, 1e-8)
        # LU and Cholesky routes agree to roundoff amplified by the conditioning
        M = mass_matrix(tree, s.q)
        J = contact_jacobian(tree, s.q, contacts)
        cond = np.linalg.cond(M) * (np.linalg.cond(J @ np.linalg.solve(M, J.T)) if J.size else 1)
        for a, b in ((B.f_x[k], D.f_x), (B.f_u[k], D.f_u), (B.g_x[k], D.g_x),
                     (B.g_u[k], D.g_u)):
            assert rel_err(a, b) < max(1e-11, 1e-14 * cond)
