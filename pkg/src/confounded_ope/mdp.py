"""Tabular confounded MDPs: validation, induced chains, stationary analysis.

Full states are pairs ``(s, u)`` flattened as ``s * n_u + u``. Observed states
are ``s``; the confounder ``u`` is hidden from the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

ROW_TOL = 1e-12
OVERLAP_TOL = 1e-12


class MDPError(ValueError):
    """Invalid MDP or policy input."""


class StationaryError(RuntimeError):
    """Stationary solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class OverlapError(ValueError):
    """A state is (numerically) never visited under the behavior policy."""


def _frozen(arr) -> NDArray[np.float64]:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def _check_rows(table: NDArray, name: str, axes: tuple[int, ...]) -> None:
    if not np.all(np.isfinite(table)):
        raise MDPError(f"{name} has non-finite entries")
    if np.any(table < -ROW_TOL) or np.any(table > 1 + ROW_TOL):
        raise MDPError(f"{name} entries must lie in [0, 1]")
    sums = table.sum(axis=axes)
    if np.max(np.abs(sums - 1.0)) > ROW_TOL:
        raise MDPError(f"{name} rows must sum to 1 (max defect {np.max(np.abs(sums - 1.0)):.2e})")


@dataclass(frozen=True)
class ConfoundedMDP:
    """Full-information MDP over ``(s, u)`` with reward on observed states.

    ``P[s, u, a, s2, u2]`` is the probability of moving to ``(s2, u2)``.
    """

    P: NDArray[np.float64]
    Phi: NDArray[np.float64]

    def __post_init__(self):
        P = _frozen(self.P)
        Phi = _frozen(self.Phi)
        if P.ndim != 5:
            raise MDPError("P must have shape (n_s, n_u, n_a, n_s, n_u)")
        n_s, n_u, n_a = P.shape[:3]
        if min(n_s, n_u, n_a) < 1 or P.shape[3:] != (n_s, n_u):
            raise MDPError(f"inconsistent transition shape {P.shape}")
        _check_rows(P, "P", (3, 4))
        if Phi.shape != (n_s,):
            raise MDPError(f"Phi must have shape ({n_s},), got {Phi.shape}")
        if not np.all(np.isfinite(Phi)):
            raise MDPError("Phi has non-finite entries")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Phi", Phi)

    @property
    def n_s(self) -> int:
        return self.P.shape[0]

    @property
    def n_u(self) -> int:
        return self.P.shape[1]

    @property
    def n_a(self) -> int:
        return self.P.shape[2]

    def observed_transitions(self) -> NDArray[np.float64]:
        """``p(s2 | s, u, a)`` with the next confounder summed out."""
        return self.P.sum(axis=4)


@dataclass(frozen=True)
class FullInfoPolicy:
    """Behavior-style policy ``pi[s, u, a]`` that may depend on the confounder."""

    pi: NDArray[np.float64]

    def __post_init__(self):
        pi = _frozen(self.pi)
        if pi.ndim != 3:
            raise MDPError("full-information policy must have shape (n_s, n_u, n_a)")
        _check_rows(pi, "policy", (2,))
        object.__setattr__(self, "pi", pi)

    @classmethod
    def from_observed(cls, policy: "ObservedPolicy", n_u: int) -> "FullInfoPolicy":
        return cls(np.repeat(policy.pi[:, None, :], n_u, axis=1))


@dataclass(frozen=True)
class ObservedPolicy:
    """Evaluation-style policy ``pi[s, a]`` over observed states only."""

    pi: NDArray[np.float64]

    def __post_init__(self):
        pi = _frozen(self.pi)
        if pi.ndim != 2:
            raise MDPError("observed policy must have shape (n_s, n_a)")
        _check_rows(pi, "policy", (1,))
        object.__setattr__(self, "pi", pi)

    @classmethod
    def uniform(cls, n_s: int, n_a: int) -> "ObservedPolicy":
        return cls(np.full((n_s, n_a), 1.0 / n_a))


@dataclass(frozen=True)
class StationaryDistribution:
    dist: NDArray[np.float64]
    residual: float


def _as_full(mdp: ConfoundedMDP, policy: FullInfoPolicy | ObservedPolicy) -> FullInfoPolicy:
    if isinstance(policy, ObservedPolicy):
        policy = FullInfoPolicy.from_observed(policy, mdp.n_u)
    if policy.pi.shape != (mdp.n_s, mdp.n_u, mdp.n_a):
        raise MDPError(
            f"policy shape {policy.pi.shape} does not match MDP {(mdp.n_s, mdp.n_u, mdp.n_a)}"
        )
    return policy


def induced_chain(mdp: ConfoundedMDP, policy: FullInfoPolicy | ObservedPolicy) -> NDArray[np.float64]:
    """Transition matrix over flattened full states under ``policy``."""
    policy = _as_full(mdp, policy)
    M = np.einsum("sua,suaxy->suxy", policy.pi, mdp.P)
    n = mdp.n_s * mdp.n_u
    return M.reshape(n, n)


def stationary_distribution(chain: NDArray, tol: float = 1e-12) -> StationaryDistribution:
    """Solve ``d M = d, sum(d) = 1`` directly.

    Uniqueness is assumed (irreducible recurrent class). Reducible chains with
    several stationary laws are not detected; use :func:`is_irreducible` first.
    """
    M = np.asarray(chain, dtype=float)
    n = M.shape[0]
    if M.shape != (n, n):
        raise MDPError("chain must be square")
    if np.max(np.abs(M.sum(axis=1) - 1.0)) > ROW_TOL:
        raise MDPError("chain rows must sum to 1")
    # Replace one balance equation with the normalization; least squares keeps
    # this well-defined even if the system is numerically rank deficient.
    lhs = M.T - np.eye(n)
    lhs = np.vstack([lhs, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    dist, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    dist = np.clip(dist, 0.0, None)
    dist /= dist.sum()
    # one refinement sweep of the fixed point removes solver round-off
    refined = dist @ M
    refined /= refined.sum()
    residual = float(np.abs(refined @ M - refined).sum())
    if residual > max(tol, 1e-12) * max(1, n):
        raise StationaryError("stationary solve did not converge", residual)
    return StationaryDistribution(_frozen(refined), residual)


def is_irreducible(chain: NDArray, atol: float = 0.0) -> bool:
    """Reachability scan over the chain's support graph."""
    adj = np.asarray(chain) > atol
    n = adj.shape[0]
    reach = adj | np.eye(n, dtype=bool)
    for _ in range(max(1, int(np.ceil(np.log2(max(n, 2)))) + 1)):
        reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
    return bool(reach.all())


def full_stationary(mdp: ConfoundedMDP, policy: FullInfoPolicy | ObservedPolicy) -> NDArray[np.float64]:
    """Stationary law over ``(s, u)`` reshaped to ``(n_s, n_u)``."""
    stat = stationary_distribution(induced_chain(mdp, policy))
    return stat.dist.reshape(mdp.n_s, mdp.n_u)


def observed_stationary(mdp: ConfoundedMDP, policy: FullInfoPolicy | ObservedPolicy) -> NDArray[np.float64]:
    return full_stationary(mdp, policy).sum(axis=1)


def policy_value(mdp: ConfoundedMDP, policy: FullInfoPolicy | ObservedPolicy) -> float:
    """Long-run average reward ``sum_{s,u} d(s, u) Phi(s)``."""
    return float(observed_stationary(mdp, policy) @ mdp.Phi)


def true_density_ratio(
    mdp: ConfoundedMDP, pi_b: FullInfoPolicy, pi_e: ObservedPolicy
) -> NDArray[np.float64]:
    """Observed-state stationary ratio ``d_e(s) / d_b(s)``."""
    d_b = observed_stationary(mdp, pi_b)
    d_e = observed_stationary(mdp, pi_e)
    if np.any(d_b < OVERLAP_TOL):
        raise OverlapError(f"states {np.flatnonzero(d_b < OVERLAP_TOL).tolist()} unvisited by behavior")
    return d_e / d_b


def full_density_ratio(
    mdp: ConfoundedMDP, pi_b: FullInfoPolicy, pi_e: ObservedPolicy
) -> NDArray[np.float64]:
    """Ratio at the ``(s, u)`` level; constant in ``u`` under memoryless confounding."""
    d_b = full_stationary(mdp, pi_b)
    d_e = full_stationary(mdp, pi_e)
    if np.any(d_b < OVERLAP_TOL):
        raise OverlapError("full state unvisited by behavior")
    return d_e / d_b


def lemma1_check(mdp: ConfoundedMDP, tol: float = 1e-12) -> bool:
    """True when ``P(s2, u2 | s, u, a)`` does not vary with ``u2``.

    This is the exogenous-confounder sufficient condition for the density
    ratio to depend on the observed state alone.
    """
    spread = mdp.P.max(axis=4) - mdp.P.min(axis=4)
    return bool(np.all(spread <= tol))


def marginal_behavior(mdp: ConfoundedMDP, pi_b: FullInfoPolicy) -> NDArray[np.float64]:
    """``pi_b(a | s)`` averaged over the stationary confounder law at ``s``."""
    d = full_stationary(mdp, pi_b)
    num = np.einsum("su,sua->sa", d, pi_b.pi)
    return num / d.sum(axis=1, keepdims=True)


def true_marginal_weights(mdp: ConfoundedMDP, pi_b: FullInfoPolicy) -> NDArray[np.float64]:
    """Marginal inverse-propensity weights ``g[k, a, j]`` from the simulator law.

    ``g_k(a|j) = sum_u p(j,u,a,k) / pi_b(a|j,u) / p(j,a,k)``; entries with
    ``p(j,a,k) = 0`` are filled with the nominal ``1 / pi_b(a|j)``.
    """
    d = full_stationary(mdp, pi_b)
    trans = mdp.observed_transitions()  # (j, u, a, k)
    joint_u = np.einsum("ju,jua,juak->juak", d, pi_b.pi, trans)
    # sum_u joint * beta; confounder values that never take ``a`` contribute nothing
    weighted = np.einsum("ju,juak->jak", d, trans * (pi_b.pi > 0)[..., None])
    joint = joint_u.sum(axis=1)
    nominal = 1.0 / marginal_behavior(mdp, pi_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(joint > 0, weighted / np.where(joint > 0, joint, 1.0), nominal[:, :, None])
    return np.transpose(g, (2, 1, 0)).copy()
