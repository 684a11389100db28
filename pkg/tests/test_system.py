import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confounded_ope.environments import RandomWalkParams, build_random_walk
from confounded_ope.mdp import ObservedPolicy, policy_value, true_density_ratio, true_marginal_weights
from confounded_ope.occupancy import EmpiricalOccupancy, population_occupancy
from confounded_ope.oracle import project_state_moments
from confounded_ope.sensitivity import bounds_from_gamma, nominal_weights
from confounded_ope.system import (
    EmptyAmbiguitySetError,
    Problem,
    SingularSystemError,
    assemble,
    feasibility_value,
    gradient,
    objective,
    solve_w,
    stationarity_matrix,
)

from conftest import SKEWED_PI_E


def one_state_problem():
    occ = EmpiricalOccupancy(np.array([[[0.5], [0.5]]]))
    return Problem.build(occ, np.array([[0.5, 0.5]]), np.array([4.0]))


def random_feasible(problem, gamma, seed, n=1):
    bounds = bounds_from_gamma(gamma, problem.occ.pi_b_marginal)
    lo, hi = bounds.box(problem.n_s)
    rng = np.random.default_rng(seed)
    return project_state_moments(lo + (hi - lo) * rng.random((n, *lo.shape)), problem, bounds)


def test_matrix_entries(skewed_problem):
    g = random_feasible(skewed_problem, 3.0, 0)[0]
    A = stationarity_matrix(skewed_problem, g)
    p, pi = skewed_problem.occ.p_jak, skewed_problem.pi_e
    for k in range(2):
        for j in range(2):
            expect = sum(p[j, a, k] * pi[j, a] * g[k, a, j] for a in range(2)) - (j == k) * skewed_problem.b[k]
            assert A[k, j] == pytest.approx(expect, abs=1e-12)


def test_one_state_system():
    pr = one_state_problem()
    g = np.full((1, 2, 1), 2.0)
    np.testing.assert_allclose(stationarity_matrix(pr, g), [[0.0]], atol=1e-15)
    np.testing.assert_allclose(solve_w(assemble(g, pr)), [1.0])
    assert feasibility_value(np.array([1.0]), pr, bounds_from_gamma(1.0, pr.occ.pi_b_marginal))[0] == pytest.approx(0.0)


def test_true_weights_solve_the_system(walk, walk_occ):
    mdp, pi_b = walk
    pi_e = ObservedPolicy(SKEWED_PI_E)
    pr = Problem.build(walk_occ, pi_e, mdp.Phi)
    g = true_marginal_weights(mdp, pi_b)
    w = true_density_ratio(mdp, pi_b, pi_e)
    sys = assemble(g, pr)
    assert np.abs(sys.A @ w).sum() <= 1e-10
    np.testing.assert_allclose(solve_w(sys), w, atol=1e-10)
    assert objective(sys) == pytest.approx(policy_value(mdp, pi_e), abs=1e-10)


def test_uniform_policy_true_value(walk, walk_problem):
    g = true_marginal_weights(*walk)
    assert objective(assemble(g, walk_problem)) == pytest.approx(1.5, abs=1e-12)


def test_unconfounded_nominal_gives_true_ratio():
    mdp, pi_b = build_random_walk(RandomWalkParams(0.15, 0.4, 0.5))
    occ = population_occupancy(mdp, pi_b)
    pi_e = ObservedPolicy(SKEWED_PI_E)
    w = solve_w(assemble(nominal_weights(occ), occ, pi_e, mdp.Phi))
    np.testing.assert_allclose(w, true_density_ratio(mdp, pi_b, pi_e), atol=1e-8)
    assert occ.p_j @ w == pytest.approx(1.0)


def test_constant_reward_objective_and_gradient(walk_occ):
    pr = Problem.build(walk_occ, SKEWED_PI_E, np.array([3.0, 3.0]))
    g = random_feasible(pr, 3.0, 1)[0]
    sys = assemble(g, pr)
    assert objective(sys) == pytest.approx(3.0)
    np.testing.assert_allclose(gradient(sys), 0.0, atol=1e-12)


def test_feasible_weights_give_nonnegative_ratio(skewed_problem):
    for g in random_feasible(skewed_problem, 4.0, 2, n=20):
        assert solve_w(assemble(g, skewed_problem)).min() >= -1e-12


def test_singular_system_detected(walk_problem):
    # weights that zero out the first surviving row of A
    g = np.zeros(walk_problem.shape)
    g[0, :, 0] = walk_problem.b[0] / walk_problem.coef[0, :, 0].sum()
    with pytest.raises(SingularSystemError):
        solve_w(assemble(g, walk_problem))


def _fd_check(problem, g, coords, h=1e-6):
    grad = gradient(assemble(g, problem))
    worst = 0.0
    for idx in coords:
        up, dn = g.copy(), g.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (objective(assemble(up, problem)) - objective(assemble(dn, problem))) / (2 * h)
        worst = max(worst, abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-8))
    return worst


def test_gradient_matches_finite_differences(skewed_problem):
    rng = np.random.default_rng(5)
    g = random_feasible(skewed_problem, 3.0, 3)[0]
    coords = [tuple(rng.integers(0, s) for s in g.shape) for _ in range(20)]
    assert _fd_check(skewed_problem, g, coords) <= 1e-4


def test_gradient_zero_off_support():
    occ = EmpiricalOccupancy(np.array([[[0.3, 0.0], [0.2, 0.0]], [[0.1, 0.2], [0.1, 0.1]]]))
    pr = Problem.build(occ, np.array([[0.5, 0.5], [0.5, 0.5]]), np.array([1.0, 2.0]))
    grad = gradient(assemble(nominal_weights(occ), pr))
    assert np.all(grad[1, :, 0] == 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 6.0))
def test_objective_first_order(walk_occ, seed, gamma):
    pr = Problem.build(walk_occ, SKEWED_PI_E, np.array([1.0, 2.0]))
    g = random_feasible(pr, gamma, seed)[0]
    d = np.random.default_rng(seed + 1).normal(size=g.shape)
    h = 1e-5
    sys = assemble(g, pr)
    pred = objective(sys) + h * np.sum(gradient(sys) * d)
    assert objective(assemble(g + h * d, pr)) == pytest.approx(pred, abs=1e-8)


def test_feasibility_zero_at_truth(walk, walk_occ):
    mdp, pi_b = walk
    pi_e = ObservedPolicy(SKEWED_PI_E)
    pr = Problem.build(walk_occ, pi_e, mdp.Phi)
    w = true_density_ratio(mdp, pi_b, pi_e)
    val, _ = feasibility_value(w, pr, bounds_from_gamma(3.0, walk_occ.pi_b_marginal))
    assert val <= 1e-8
    # at gamma = 1 the confounded truth is rejected
    val1, _ = feasibility_value(w, pr, bounds_from_gamma(1.0, walk_occ.pi_b_marginal))
    assert val1 > 1e-3


def test_feasibility_empty_set(walk_occ):
    pr = Problem.build(walk_occ, SKEWED_PI_E, np.array([1.0, 2.0]))
    bounds = bounds_from_gamma(1.0, walk_occ.pi_b_marginal)
    shifted = type(bounds)(1.0, bounds.l + 1.0, bounds.m + 1.0)
    with pytest.raises(EmptyAmbiguitySetError):
        feasibility_value(np.ones(2), pr, shifted)
