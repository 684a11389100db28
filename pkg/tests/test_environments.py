import itertools

import numpy as np
import pytest

from confounded_ope.environments import (
    EAST,
    NORTH,
    EnvConfigError,
    GridworldParams,
    RandomWalkParams,
    build_gridworld,
    build_random_walk,
    cell_index,
    full_info_optimal,
    gridworld_policies,
    marginal_optimal,
    mixture,
    random_walk_stationary_closed_form,
    u0_optimal,
    uniform_policy,
)
from confounded_ope.mdp import ObservedPolicy, lemma1_check, marginal_behavior, observed_stationary

GRID_P = np.linspace(0.05, 0.45, 5)


@pytest.mark.parametrize("p1,p2", list(itertools.product(GRID_P, GRID_P)))
@pytest.mark.parametrize("behavior", [0.25, (0.2, 0.35)])
def test_stationary_matches_closed_form(p1, p2, behavior):
    mdp, pi_b = build_random_walk(RandomWalkParams(p1, p2, behavior))
    q = np.broadcast_to(np.asarray(behavior, dtype=float), (2,))
    expected = random_walk_stationary_closed_form(p1, p2, q[0], q[1])
    np.testing.assert_allclose(observed_stationary(mdp, pi_b), expected, atol=1e-10)


def test_equal_jump_walk_stationary(walk):
    # confounded behavior tilts the walk even when p_u1 == p_u2
    mdp, pi_b = walk
    np.testing.assert_allclose(observed_stationary(mdp, pi_b), [0.45, 0.55], atol=1e-12)


def test_random_walk_marginal_behavior_uniform():
    mdp, pi_b = build_random_walk(RandomWalkParams(0.1, 0.4, 0.25))
    np.testing.assert_allclose(marginal_behavior(mdp, pi_b), 0.5, atol=1e-12)
    assert lemma1_check(mdp)


def test_random_walk_rejects_bad_params():
    with pytest.raises(EnvConfigError):
        RandomWalkParams(p_u1=0.7)
    with pytest.raises(EnvConfigError):
        RandomWalkParams(u_dist=(0.3, 0.3))


def test_gridworld_shape_and_exogenous_wind():
    mdp = build_gridworld()
    assert (mdp.n_s, mdp.n_u, mdp.n_a) == (9, 2, 4)
    assert lemma1_check(mdp)


def test_gridworld_east_under_wind_stays():
    obs = build_gridworld().observed_transitions()
    for s in range(9):
        assert obs[s, 1, EAST, s] == pytest.approx(1.0)


def test_gridworld_north_from_center():
    obs = build_gridworld().observed_transitions()
    center = cell_index(1, 1)
    row = obs[center, 0, NORTH]
    assert row[cell_index(0, 1)] == pytest.approx(0.8)
    assert row[cell_index(1, 2)] == pytest.approx(0.1)
    assert row[cell_index(1, 0)] == pytest.approx(0.1)


def test_gridworld_param_validation():
    with pytest.raises(EnvConfigError):
        GridworldParams(success_prob=0.9)
    with pytest.raises(EnvConfigError):
        GridworldParams(goal_cell=(3, 0))


def test_mixture_endpoints():
    mdp = build_gridworld()
    base = u0_optimal(mdp)
    np.testing.assert_allclose(mixture(0.0, base).pi, uniform_policy(mdp).pi)
    np.testing.assert_allclose(mixture(1.0, base).pi, base.pi)


@pytest.mark.parametrize("kind", ["full_info_optimal", "u0_optimal", "marginal_optimal", "uniform"])
def test_named_policies_are_distributions(kind):
    pol = gridworld_policies(build_gridworld(), kind)
    np.testing.assert_allclose(pol.pi.sum(axis=-1), 1.0)


def test_full_info_optimal_uses_confounder():
    pi = full_info_optimal(build_gridworld()).pi
    assert np.any(np.abs(pi[:, 0] - pi[:, 1]) > 0.5)


def test_optimal_policies_beat_uniform():
    from confounded_ope.mdp import policy_value

    mdp = build_gridworld()
    uniform = policy_value(mdp, uniform_policy(mdp))
    assert policy_value(mdp, marginal_optimal(mdp)) > uniform
    assert policy_value(mdp, full_info_optimal(mdp)) >= policy_value(mdp, marginal_optimal(mdp)) - 1e-9


def test_mixture_requires_eta_and_base():
    with pytest.raises(EnvConfigError):
        gridworld_policies(build_gridworld(), "mixture")
    with pytest.raises(EnvConfigError):
        gridworld_policies(build_gridworld(), "nope")
