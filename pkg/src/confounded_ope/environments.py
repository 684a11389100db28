"""Benchmark confounded MDPs: the two-state random walk and the 3x3 windy gridworld."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .mdp import ConfoundedMDP, FullInfoPolicy, MDPError, ObservedPolicy, full_stationary


class EnvConfigError(MDPError):
    """Invalid environment parameters."""


def _check_prob(name: str, x: float, hi: float = 1.0) -> None:
    if not (0.0 <= x <= hi):
        raise EnvConfigError(f"{name}={x} must lie in [0, {hi}]")


def _check_dist(name: str, d: Sequence[float]) -> NDArray[np.float64]:
    arr = np.asarray(d, dtype=float)
    if arr.ndim != 1 or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-12:
        raise EnvConfigError(f"{name} must be a probability vector")
    return arr


# ---------------------------------------------------------------------------
# Confounded random walk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomWalkParams:
    """Parameters of the two-state confounded random walk.

    ``pi_a1_given_u1`` is the behavior probability of action 0 under confounder
    value 0; a pair gives a separate value per observed state. Under confounder
    value 1 the complementary probability is used.
    """

    p_u1: float = 0.3
    p_u2: float = 0.3
    pi_a1_given_u1: float | tuple[float, float] = 0.25
    u_dist: tuple[float, float] = (0.5, 0.5)
    Phi: tuple[float, float] = (1.0, 2.0)

    def __post_init__(self):
        _check_prob("p_u1", self.p_u1, 0.5)
        _check_prob("p_u2", self.p_u2, 0.5)
        for p in np.atleast_1d(self.pi_a1_given_u1):
            _check_prob("pi_a1_given_u1", float(p))
        if np.size(self.pi_a1_given_u1) not in (1, 2):
            raise EnvConfigError("pi_a1_given_u1 must be a float or a pair")
        _check_dist("u_dist", self.u_dist)
        if len(self.u_dist) != 2 or len(self.Phi) != 2:
            raise EnvConfigError("random walk has two confounder values and two states")

    def behavior_table(self) -> NDArray[np.float64]:
        """``pi[s, u, a]`` for the confounded behavior policy."""
        per_state = np.broadcast_to(np.asarray(self.pi_a1_given_u1, dtype=float), (2,))
        pi = np.empty((2, 2, 2))
        for s in range(2):
            q = per_state[s]
            pi[s, 0] = (q, 1 - q)
            pi[s, 1] = (1 - q, q)
        return pi


def random_walk_cross_probs(p_u1: float, p_u2: float) -> NDArray[np.float64]:
    """Probability ``c[s, u, a]`` of jumping to the other observed state.

    Action 0 from state 1 jumps with ``p_u1`` / ``1/2 - p_u2`` (confounder 0/1);
    from state 0 the roles are mirrored. Action 1 is action 0 with the two
    states swapped, so a uniform policy jumps with probability 1/4 everywhere.
    """
    c = np.empty((2, 2, 2))
    c[1, 0, 0], c[1, 1, 0] = p_u1, 0.5 - p_u2
    c[0, 0, 0], c[0, 1, 0] = 0.5 - p_u1, p_u2
    c[0, :, 1] = c[1, :, 0]
    c[1, :, 1] = c[0, :, 0]
    return c


def build_random_walk(params: RandomWalkParams = RandomWalkParams()) -> tuple[ConfoundedMDP, FullInfoPolicy]:
    """Random-walk MDP and its confounded behavior policy."""
    cross = random_walk_cross_probs(params.p_u1, params.p_u2)
    u_dist = np.asarray(params.u_dist, dtype=float)
    P = np.zeros((2, 2, 2, 2, 2))
    for s in range(2):
        other = 1 - s
        for u in range(2):
            for a in range(2):
                P[s, u, a, other, :] = cross[s, u, a] * u_dist
                P[s, u, a, s, :] = (1 - cross[s, u, a]) * u_dist
    mdp = ConfoundedMDP(P, np.asarray(params.Phi, dtype=float))
    return mdp, FullInfoPolicy(params.behavior_table())


def random_walk_stationary_closed_form(
    p_u1: float, p_u2: float, pi_s1u1: float, pi_s2u1: float
) -> NDArray[np.float64]:
    """Closed-form observed stationary law of the walk under the behavior policy.

    Valid for a uniform confounder law with complementary action-0 probabilities
    under the second confounder value.
    """
    drift = 1.0 - 2.0 * p_u1 - 2.0 * p_u2
    denom = 1.0 + (pi_s1u1 - pi_s2u1) * drift
    first = (1.0 - pi_s2u1 - (1.0 - 2.0 * pi_s2u1) * (p_u1 + p_u2)) / denom
    second = (p_u1 + p_u2 + pi_s1u1 * drift) / denom
    return np.array([first, second])


# ---------------------------------------------------------------------------
# Windy gridworld
# ---------------------------------------------------------------------------

NORTH, SOUTH, EAST, WEST = range(4)
_MOVES = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}
GRID = 3


@dataclass(frozen=True)
class GridworldParams:
    success_prob: float = 0.8
    slip_prob: float = 0.1
    wind_prob: float = 0.5
    goal_cell: tuple[int, int] = (0, 2)
    hazard_cells: tuple[tuple[int, int], ...] = ((1, 1), (2, 1))
    goal_reward: float = 1.0
    hazard_reward: float = -0.3

    def __post_init__(self):
        _check_prob("success_prob", self.success_prob)
        _check_prob("slip_prob", self.slip_prob)
        _check_prob("wind_prob", self.wind_prob)
        if abs(self.success_prob + 2 * self.slip_prob - 1.0) > 1e-12:
            raise EnvConfigError("success_prob + 2 * slip_prob must equal 1")
        cells = [tuple(self.goal_cell), *map(tuple, self.hazard_cells)]
        for r, c in cells:
            if not (0 <= r < GRID and 0 <= c < GRID):
                raise EnvConfigError(f"cell {(r, c)} outside the {GRID}x{GRID} grid")
        if tuple(self.goal_cell) in map(tuple, self.hazard_cells):
            raise EnvConfigError("goal cell cannot be a hazard")

    def rewards(self) -> NDArray[np.float64]:
        Phi = np.zeros(GRID * GRID)
        for r, c in self.hazard_cells:
            Phi[cell_index(r, c)] = self.hazard_reward
        Phi[cell_index(*self.goal_cell)] = self.goal_reward
        return Phi


def cell_index(r: int, c: int) -> int:
    return r * GRID + c


def _step(s: int, direction: int) -> int:
    r, c = divmod(s, GRID)
    dr, dc = _MOVES[direction]
    nr, nc = r + dr, c + dc
    if 0 <= nr < GRID and 0 <= nc < GRID:
        return cell_index(nr, nc)
    return s


def build_gridworld(params: GridworldParams = GridworldParams()) -> ConfoundedMDP:
    """3x3 gridworld with an exogenous binary westward-wind confounder."""
    n_s, n_u, n_a = GRID * GRID, 2, 4
    wind = np.array([1.0 - params.wind_prob, params.wind_prob])
    obs = np.zeros((n_s, n_u, n_a, n_s))
    for s in range(n_s):
        for a in range(n_a):
            obs[s, 0, a, _step(s, a)] += params.success_prob
            obs[s, 0, a, _step(s, EAST)] += params.slip_prob
            obs[s, 0, a, _step(s, WEST)] += params.slip_prob
            if a == EAST:
                obs[s, 1, a, s] += 1.0
            else:
                obs[s, 1, a, _step(s, WEST)] += 1.0
    P = obs[..., None] * wind
    return ConfoundedMDP(P, params.rewards())


def _relative_value_iteration(
    trans: NDArray, reward: NDArray, tol: float = 1e-11, max_iter: int = 200_000
) -> NDArray[np.int_]:
    """Greedy actions of an average-reward MDP, ``trans[x, a, y]``.

    Runs on the aperiodic transform ``(P + I) / 2``, which has the same
    optimal policies.
    """
    n, n_a, _ = trans.shape
    lazy = 0.5 * trans + 0.5 * np.eye(n)[:, None, :]
    h = np.zeros(n)
    for _ in range(max_iter):
        q = reward[:, None] + lazy @ h
        new = q.max(axis=1)
        new -= new[0]
        span = np.ptp(new - h)
        h = new
        if span < tol:
            q = reward[:, None] + lazy @ h
            best = q.max(axis=1, keepdims=True)
            # smallest index among near-ties, for determinism
            return np.argmax(q >= best - 1e-9, axis=1)
    raise RuntimeError("relative value iteration did not converge")


def _one_hot(actions: NDArray[np.int_], n_a: int) -> NDArray[np.float64]:
    return np.eye(n_a)[actions]


def full_info_optimal(mdp: ConfoundedMDP) -> FullInfoPolicy:
    n = mdp.n_s * mdp.n_u
    trans = mdp.P.reshape(n, mdp.n_a, n)
    reward = np.repeat(mdp.Phi, mdp.n_u)
    acts = _relative_value_iteration(trans, reward)
    return FullInfoPolicy(_one_hot(acts, mdp.n_a).reshape(mdp.n_s, mdp.n_u, mdp.n_a))


def u0_optimal(mdp: ConfoundedMDP) -> ObservedPolicy:
    """Optimal for the confounder-0 dynamics, applied whatever the confounder."""
    trans = mdp.observed_transitions()[:, 0]
    return ObservedPolicy(_one_hot(_relative_value_iteration(trans, mdp.Phi), mdp.n_a))


def marginalized_transitions(mdp: ConfoundedMDP) -> NDArray[np.float64]:
    """``p(k | j, a)`` averaging over the stationary confounder law at ``j``.

    The confounder law is taken under the uniform observed policy; it is the
    same for every observed policy when the confounder is exogenous.
    """
    d = full_stationary(mdp, ObservedPolicy.uniform(mdp.n_s, mdp.n_a))
    u_given_s = d / d.sum(axis=1, keepdims=True)
    return np.einsum("ju,juak->jak", u_given_s, mdp.observed_transitions())


def marginal_optimal(mdp: ConfoundedMDP) -> ObservedPolicy:
    trans = marginalized_transitions(mdp)
    return ObservedPolicy(_one_hot(_relative_value_iteration(trans, mdp.Phi), mdp.n_a))


def uniform_policy(mdp: ConfoundedMDP) -> ObservedPolicy:
    return ObservedPolicy.uniform(mdp.n_s, mdp.n_a)


def mixture(eta: float, base: ObservedPolicy) -> ObservedPolicy:
    """``eta * base + (1 - eta) * uniform``."""
    _check_prob("eta", eta)
    n_s, n_a = base.pi.shape
    return ObservedPolicy(eta * base.pi + (1.0 - eta) / n_a)


def epsilon_soft(policy: FullInfoPolicy, epsilon: float) -> FullInfoPolicy:
    _check_prob("epsilon", epsilon)
    n_a = policy.pi.shape[-1]
    return FullInfoPolicy((1.0 - epsilon) * policy.pi + epsilon / n_a)


def gridworld_policies(
    mdp: ConfoundedMDP, kind: str, eta: float | None = None, base: str | None = None
) -> FullInfoPolicy | ObservedPolicy:
    """Named gridworld policies; ``mixture`` needs ``eta`` and a ``base`` kind."""
    if kind == "full_info_optimal":
        return full_info_optimal(mdp)
    if kind == "u0_optimal":
        return u0_optimal(mdp)
    if kind == "marginal_optimal":
        return marginal_optimal(mdp)
    if kind == "uniform":
        return uniform_policy(mdp)
    if kind == "mixture":
        if eta is None or base is None:
            raise EnvConfigError("mixture policy needs eta and base")
        base_policy = gridworld_policies(mdp, base)
        if not isinstance(base_policy, ObservedPolicy):
            raise EnvConfigError("mixture base must be an observed-state policy")
        return mixture(eta, base_policy)
    raise EnvConfigError(f"unknown policy kind {kind!r}")


def gridworld_behavior(mdp: ConfoundedMDP, epsilon: float = 0.1) -> FullInfoPolicy:
    """Epsilon-soft full-information optimal policy; keeps every action in support."""
    return epsilon_soft(full_info_optimal(mdp), epsilon)
