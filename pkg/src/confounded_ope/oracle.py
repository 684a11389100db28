"""Brute-force reference bounds for small instances.

Candidates are drawn uniformly from the weight box, moved onto the moment
constraints by a nearest-point (L1) repair, and evaluated in batch. The best
candidates are then polished. Under per-state moments the feasible weights
factor over ``(j, a)`` pairs, so choosing weights is an average-reward MDP for
an adversary picking each ``(j, a)`` transition row; the polish runs that
adversary's policy iteration, whose greedy step is a fractional knapsack.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .bounds import FEAS_TOL, feasibility_certificate, g_step, moment_projection, w_step
from .lp import LPInfeasible
from .occupancy import make_rng
from .sensitivity import SensitivityBounds, nominal_weights
from .sensitivity import project_state_moments as _project
from .system import EmptyAmbiguitySetError, Problem, SingularSystemError, assemble, objective

log = logging.getLogger(__name__)

BLOCK = 1000


@dataclass(frozen=True)
class OracleParams:
    n_samples: int = 20000
    n_polish: int = 5
    n_candidates: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.n_samples, self.n_polish, self.n_candidates) < 1:
            raise ValueError("oracle budgets must be >= 1")


@dataclass
class OracleResult:
    lower: float
    upper: float
    lower_g: NDArray[np.float64]
    upper_g: NDArray[np.float64]
    diagnostics: dict = field(default_factory=dict)


def project_state_moments(G: NDArray, problem: Problem, bounds: SensitivityBounds) -> NDArray[np.float64]:
    """Batch form of :func:`~confounded_ope.sensitivity.project_state_moments`."""
    return _project(G, problem.occ, bounds)


def batch_objective(G: NDArray, problem: Problem) -> NDArray[np.float64]:
    """Objective for a batch of weights; ``nan`` where the system is singular."""
    A = np.einsum("kaj,nkaj->nkj", problem.coef, G) - np.diag(problem.b)
    A[:, -1, :] = problem.b
    v = np.zeros(problem.n_s)
    v[-1] = 1.0
    out = np.full(G.shape[0], np.nan)
    cond = np.linalg.cond(A)
    ok = np.isfinite(cond) & (cond < 1e12)
    if ok.any():
        w = np.linalg.solve(A[ok], np.broadcast_to(v, (ok.sum(), problem.n_s))[..., None])[..., 0]
        out[ok] = w @ problem.varphi
    return out


def _greedy_rows(problem: Problem, bounds: SensitivityBounds, bias: NDArray, sign: float) -> NDArray[np.float64]:
    """Weights maximizing ``sign * sum_k p(j,a,k) g_k(a|j) bias(k)`` per ``(j, a)``."""
    n, n_a = problem.n_s, problem.occ.n_a
    lo, hi = bounds.box(n)
    g = lo.copy()
    p = problem.occ.p_jak
    pj = problem.occ.p_j
    order = np.argsort(-sign * bias, kind="stable")
    for j in range(n):
        for a in range(n_a):
            c = p[j, a]
            budget = pj[j] - c @ lo[:, a, j]
            for k in order:
                if budget <= 0:
                    break
                if c[k] <= 0:
                    continue
                room = (hi[k, a, j] - lo[k, a, j]) * c[k]
                take = min(room, budget)
                g[k, a, j] += take / c[k]
                budget -= take
    return g


def _gain_bias(problem: Problem, g: NDArray) -> tuple[float, NDArray[np.float64]]:
    """Average reward and bias of the reweighted chain under the evaluation policy."""
    pj = problem.occ.p_j
    # K[j, k] = sum_a pi_e(a|j) p(j,a,k) g_k(a|j) / p(j)
    K = np.einsum("kaj,kaj->jk", problem.coef, g) / pj[:, None]
    n = problem.n_s
    # h = Phi - rho + K h with h[0] = 0; unknowns (rho, h[1:])
    M = np.eye(n) - K
    lhs = np.hstack([np.ones((n, 1)), M[:, 1:]])
    sol = np.linalg.solve(lhs, problem.Phi)
    bias = np.concatenate([[0.0], sol[1:]])
    return float(sol[0]), bias


def polish_state_moments(g: NDArray, problem: Problem, bounds: SensitivityBounds, sign: float, rounds: int) -> NDArray[np.float64]:
    """Adversarial policy iteration from ``g``; stops early once no row improves."""
    g = np.asarray(g, dtype=float)
    for _ in range(rounds):
        _, bias = _gain_bias(problem, g)
        cand = _greedy_rows(problem, bounds, bias, sign)
        p = problem.occ.p_jak
        cur = np.einsum("jak,kaj,k->ja", p, g, bias)
        new = np.einsum("jak,kaj,k->ja", p, cand, bias)
        improve = sign * (new - cur) > 1e-12
        if not improve.any():
            break
        mask = np.transpose(np.broadcast_to(improve[:, :, None], p.shape), (2, 1, 0))
        g = np.where(mask, cand, g)
    return g


def _polish_alternating(g: NDArray, problem: Problem, bounds: SensitivityBounds, moments: str, rounds: int) -> NDArray[np.float64]:
    for _ in range(rounds):
        w_star, resid = w_step(g, problem)
        if resid <= 1e-12:
            break
        try:
            g = g_step(g, w_star, problem, bounds, moments)
        except LPInfeasible:
            break
    return g


def brute_force_bounds(
    problem: Problem,
    bounds: SensitivityBounds,
    params: OracleParams = OracleParams(),
    moments: str = "state",
) -> OracleResult:
    """Reference ``[lower, upper]`` with witnessing weights."""
    if problem.n_s > 4:
        warnings.warn("brute-force oracle is meant for at most 4 states", RuntimeWarning, stacklevel=2)
    lo, hi = bounds.box(problem.n_s)
    try:
        moment_projection(nominal_weights(problem.occ), problem, bounds, moments)
    except EmptyAmbiguitySetError:
        raise
    values, pool = [], []
    for start in range(0, params.n_samples, BLOCK):
        size = min(BLOCK, params.n_samples - start)
        rng = make_rng(params.seed, start // BLOCK)
        G = lo + (hi - lo) * rng.random((size, *lo.shape))
        if moments == "state":
            G = project_state_moments(G, problem, bounds)
        else:
            G = np.stack([_polish_alternating(moment_projection(x, problem, bounds, moments), problem, bounds, moments, 1) for x in G])
        values.append(batch_objective(G, problem))
        pool.append(G)
    values = np.concatenate(values)
    pool = np.concatenate(pool)
    finite = np.isfinite(values)
    result = {}
    for direction, sign in (("min", -1.0), ("max", 1.0)):
        order = np.argsort(-sign * np.where(finite, values, -sign * np.inf))
        seeds = [nominal_weights(problem.occ)] + [pool[i] for i in order[: params.n_candidates] if finite[i]]
        best_val, best_g = None, None
        for g0 in seeds:
            g0 = project_state_moments(g0[None], problem, bounds)[0] if moments == "state" else moment_projection(g0, problem, bounds, moments)
            if moments == "state":
                g1 = polish_state_moments(g0, problem, bounds, sign, params.n_polish)
            else:
                g1 = _polish_alternating(g0, problem, bounds, moments, params.n_polish)
            for g in (g0, g1):
                try:
                    ok, val, _ = feasibility_certificate(g, problem, bounds, moments)
                except SingularSystemError:
                    continue
                if ok and (best_val is None or sign * val > sign * best_val):
                    best_val, best_g = val, g
        sampled = values[finite & ~np.isnan(values)]
        result[direction] = (best_val, best_g, float(sampled.min() if sign < 0 else sampled.max()) if sampled.size else None)
    if result["min"][0] is None or result["max"][0] is None:
        raise EmptyAmbiguitySetError("oracle found no feasible weights")
    lower, lower_g, lower_sampled = result["min"]
    upper, upper_g, upper_sampled = result["max"]
    diag = {
        "n_samples": params.n_samples,
        "n_feasible_samples": int(finite.sum()),
        "sampled_lower": lower_sampled,
        "sampled_upper": upper_sampled,
        "feasibility_tol": FEAS_TOL,
    }
    return OracleResult(objective(assemble(lower_g, problem)), objective(assemble(upper_g, problem)), lower_g, upper_g, diag)
