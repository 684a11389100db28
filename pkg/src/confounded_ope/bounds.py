"""Bounds on the evaluation-policy value by nonconvex projected gradient.

Each chain alternates an L1 repair of the current weights onto the feasible
set (a ``w``-step LP and a ``g``-step LP) with a projected gradient step on
``varphi @ A_tilde(g)^{-1} v``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .lp import LPFailure, LPInfeasible, solve_lp
from .occupancy import make_rng
from .sensitivity import (
    SensitivityBounds,
    bounds_from_gamma,
    is_in_ambiguity_set,
    moment_constraints,
    nominal_weights,
    project_state_moments,
)
from .system import (
    EmptyAmbiguitySetError,
    Problem,
    SingularSystemError,
    assemble,
    gradient,
    objective,
    solve_w,
    stationarity_matrix,
)

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6


@dataclass(frozen=True)
class PgdParams:
    """Algorithm settings.

    ``eta0`` is a fraction of the box width: each step moves every coordinate
    by at most ``eta_k * (m - l)``, with ``eta_k = eta0 * (k + 1) ** -kappa``.
    ``step_from_repaired`` steps from the repaired point rather than the raw
    iterate; ``tangent_step`` projects the gradient onto the moment
    equalities before stepping. A chain stops early once its best feasible
    value has not improved for ``patience`` iterations.
    """

    eta0: float = 0.5
    kappa: float = 0.5
    n_iters: int = 200
    n_restarts: int = 10
    repair_rounds: int = 3
    seed: int = 0
    step_from_repaired: bool = True
    tangent_step: bool = True
    patience: int = 25
    moments: str = "state"

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if not (0 < self.kappa <= 1):
            raise ValueError("kappa must lie in (0, 1]")
        if min(self.n_iters, self.n_restarts, self.repair_rounds, self.patience) < 1:
            raise ValueError("iteration budgets must be >= 1")


@dataclass
class ExtremumResult:
    value: float
    g: NDArray[np.float64]
    diagnostics: dict = field(default_factory=dict)


@dataclass
class BoundsResult:
    gamma: float
    lower: float
    upper: float
    lower_g: NDArray[np.float64] | None
    upper_g: NDArray[np.float64] | None
    feasible: bool = True
    lower_raw: float | None = None
    upper_raw: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lower_raw is None:
            self.lower_raw = self.lower
        if self.upper_raw is None:
            self.upper_raw = self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


class NoFeasibleIterate(RuntimeError):
    """No repaired iterate met the feasibility tolerances."""


# ---------------------------------------------------------------------------
# Sub-steps
# ---------------------------------------------------------------------------


def project_box(g: NDArray, bounds: SensitivityBounds) -> NDArray[np.float64]:
    g = np.asarray(g, dtype=float)
    lo, hi = bounds.box(g.shape[0])
    return np.clip(g, lo, hi)


def w_step(g: NDArray, problem: Problem) -> tuple[NDArray[np.float64], float]:
    """``argmin ||A(g) w||_1`` over ``w >= 0`` with ``b @ w = 1``."""
    A = stationarity_matrix(problem, g)
    n = problem.n_s
    eye = np.eye(n)
    c = np.concatenate([np.zeros(n), np.ones(n)])
    A_ub = np.block([[A, -eye], [-A, -eye]])
    b_ub = np.zeros(2 * n)
    A_eq = np.concatenate([problem.b, np.zeros(n)])[None, :]
    x, val = solve_lp(c, A_ub, b_ub, A_eq, [1.0], [(0, None)] * (2 * n))
    return x[:n], max(val, 0.0)


def _stationarity_rows(problem: Problem, w: NDArray) -> tuple[NDArray, NDArray]:
    """``A(g) w = 0`` written as ``R @ g.ravel() = rhs``."""
    n, n_a, _ = problem.shape
    R = np.zeros((n, n, n_a, n))
    for k in range(n):
        R[k, k] = problem.coef[k] * w[None, :]
    return R.reshape(n, -1), problem.b * w


def _nearest_l1(g0: NDArray, bounds: SensitivityBounds, E: NDArray, r: NDArray) -> NDArray[np.float64]:
    size = g0.size
    lo, hi = bounds.box(g0.shape[0])
    eye = np.eye(size)
    c = np.concatenate([np.zeros(size), np.ones(size)])
    A_ub = np.block([[eye, -eye], [-eye, -eye]])
    flat = g0.ravel()
    b_ub = np.concatenate([flat, -flat])
    A_eq = np.hstack([E, np.zeros((E.shape[0], size))]) if E.size else None
    box = list(zip(lo.ravel(), hi.ravel())) + [(0, None)] * size
    x, _ = solve_lp(c, A_ub, b_ub, A_eq, r if E.size else None, box)
    return x[:size].reshape(g0.shape)


def g_step(
    g_current: NDArray, w_star: NDArray, problem: Problem, bounds: SensitivityBounds, moments: str = "state"
) -> NDArray[np.float64]:
    """Nearest (L1) weights in the ambiguity set that make ``w_star`` stationary.

    Raises :class:`LPInfeasible` when no such weights exist.
    """
    E, r, _ = moment_constraints(problem.occ, moments)
    R, rhs = _stationarity_rows(problem, np.asarray(w_star, dtype=float))
    if moments == "state":
        # with per-state moments the stationarity rows sum to zero; drop one
        R, rhs = R[:-1], rhs[:-1]
    return _nearest_l1(np.asarray(g_current, dtype=float), bounds, np.vstack([E, R]), np.concatenate([r, rhs]))


def moment_projection(g: NDArray, problem: Problem, bounds: SensitivityBounds, moments: str = "state") -> NDArray[np.float64]:
    """Nearest (L1) point of box plus moment constraints."""
    E, r, _ = moment_constraints(problem.occ, moments)
    try:
        return _nearest_l1(np.asarray(g, dtype=float), bounds, E, r)
    except LPInfeasible as exc:
        raise EmptyAmbiguitySetError("box and moment constraints are incompatible") from exc


def feasibility_certificate(g: NDArray, problem: Problem, bounds: SensitivityBounds, moments: str = "state") -> tuple[bool, float, float]:
    """``(feasible, value, residual)`` for weights ``g``.

    ``residual`` is the next-state-conditional L1 stationarity residual of
    ``w = A_tilde(g)^{-1} v``, an upper bound on the feasibility LP value at
    that ``w``.
    """
    sys = assemble(g, problem)
    w = solve_w(sys)
    value = float(sys.varphi @ w)
    scale = np.where(problem.b > 0, 1.0 / np.where(problem.b > 0, problem.b, 1.0), 0.0)
    residual = float(np.abs(sys.A @ w * scale).sum())
    member = is_in_ambiguity_set(g, problem.occ, bounds, tol=FEAS_TOL, moments=moments)
    ok = bool(member.ok and residual <= FEAS_TOL and w.min() >= -FEAS_TOL)
    return ok, value, residual


def _stationary_member(g: NDArray, problem: Problem) -> bool:
    try:
        sys = assemble(g, problem)
        w = solve_w(sys)
    except SingularSystemError:
        return False
    return bool(np.abs(sys.A @ w).sum() <= 1e-10 and w.min() >= 0)


def repair(g: NDArray, problem: Problem, bounds: SensitivityBounds, params: PgdParams) -> NDArray[np.float64]:
    """Move ``g`` back to feasible weights.

    Under per-state moments every member of the box-plus-moments set already
    has a stationary ratio, so the exact L1 projection onto that set is tried
    first. Otherwise alternate ``w``-steps and ``g``-steps, falling back to a
    moment-only projection.
    """
    g = np.asarray(g, dtype=float)
    if params.moments == "state":
        projected = project_state_moments(g, problem.occ, bounds)
        if _stationary_member(projected, problem):
            return projected
    E, r, _ = moment_constraints(problem.occ, params.moments)
    for _ in range(params.repair_rounds):
        if np.max(np.abs(E @ g.ravel() - r), initial=0.0) <= 1e-10 and _stationary_member(g, problem):
            return g
        try:
            w_star, _ = w_step(g, problem)
            g = g_step(g, w_star, problem, bounds, params.moments)
        except LPInfeasible:
            g = moment_projection(g, problem, bounds, params.moments)
        except LPFailure as exc:
            log.debug("repair LP failure: %s", exc)
            g = moment_projection(g, problem, bounds, params.moments)
    return g


# ---------------------------------------------------------------------------
# Algorithm driver
# ---------------------------------------------------------------------------


def _initial_points(problem: Problem, bounds: SensitivityBounds, params: PgdParams, direction: str, warm: list[NDArray]) -> list[NDArray]:
    starts = [project_box(nominal_weights(problem.occ), bounds)]
    starts += [project_box(w, bounds) for w in warm if w is not None]
    lo, hi = bounds.box(problem.n_s)
    stream = 0 if direction == "min" else 1
    for restart in range(len(starts), params.n_restarts):
        rng = make_rng(params.seed, restart, stream)
        starts.append(lo + (hi - lo) * rng.random(lo.shape))
    return starts


def feasible_direction(
    grad: NDArray, g: NDArray, lo: NDArray, hi: NDArray, E: NDArray, sweeps: int = 4
) -> NDArray[np.float64]:
    """Ascent direction kept tangent to the moment equalities ``E``.

    Coordinates sitting on a box face and pushing outward are frozen, and the
    remaining direction is projected onto the null space of ``E`` restricted
    to the free coordinates.
    """
    d = np.asarray(grad, dtype=float).ravel().copy()
    gf, lof, hif = g.ravel(), lo.ravel(), hi.ravel()
    free = np.ones_like(d, dtype=bool)
    for _ in range(sweeps):
        free &= ~(((gf <= lof + 1e-12) & (d < 0)) | ((gf >= hif - 1e-12) & (d > 0)))
        d[~free] = 0.0
        if E.size:
            Ef = E[:, free]
            coef, *_ = np.linalg.lstsq(Ef @ Ef.T, Ef @ d[free], rcond=None)
            d[free] -= Ef.T @ coef
    return d.reshape(g.shape)


def _check_direction(direction: str) -> float:
    if direction not in ("min", "max"):
        raise ValueError("direction must be 'min' or 'max'")
    return 1.0 if direction == "max" else -1.0


def pgd_extremum(
    direction: str,
    problem: Problem,
    bounds: SensitivityBounds,
    params: PgdParams = PgdParams(),
    warm: list[NDArray] | None = None,
) -> ExtremumResult:
    """Best feasible objective found over all restarts in ``direction``."""
    sign = _check_direction(direction)
    lo, hi = bounds.box(problem.n_s)
    width = hi - lo
    E, _, _ = moment_constraints(problem.occ, params.moments)
    best_val, best_g = None, None
    chains = []
    n_skipped = 0
    for chain_id, g in enumerate(_initial_points(problem, bounds, params, direction, warm or [])):
        chain_best = None
        stale = 0
        last_grad = np.zeros_like(g)
        iters = 0
        for it in range(params.n_iters):
            iters = it + 1
            try:
                g_rep = repair(g, problem, bounds, params)
            except EmptyAmbiguitySetError:
                raise
            try:
                ok, val, _ = feasibility_certificate(g_rep, problem, bounds, params.moments)
                grad = gradient(assemble(g_rep, problem))
            except SingularSystemError:
                n_skipped += 1
                ok, grad = False, last_grad
            stale += 1
            if ok:
                if chain_best is None or sign * val > sign * chain_best + 1e-10 * max(1.0, abs(chain_best)):
                    chain_best = val
                    stale = 0
                if best_val is None or sign * val > sign * best_val:
                    best_val, best_g = val, g_rep.copy()
            if stale >= params.patience:
                break
            last_grad = grad
            eta = params.eta0 * (it + 1) ** (-params.kappa)
            base = g_rep if params.step_from_repaired else g
            step = feasible_direction(sign * grad, base, lo, hi, E) if params.tangent_step else sign * grad
            scale = np.max(np.abs(step / np.where(width > 0, width, 1.0)))
            step = step / scale if scale > 0 else step
            g_next = project_box(base + eta * step, bounds)
            if np.allclose(g_next, g_rep, atol=1e-12, rtol=0):
                break
            g = g_next
        chains.append({"chain": chain_id, "best": chain_best, "iterations": iters})
    if best_val is None:
        raise NoFeasibleIterate("no feasible iterate found")
    return ExtremumResult(best_val, best_g, {"chains": chains, "skipped_singular": n_skipped})


def ambiguity_set_nonempty(problem: Problem, bounds: SensitivityBounds, moments: str = "state") -> bool:
    try:
        moment_projection(nominal_weights(problem.occ), problem, bounds, moments)
    except EmptyAmbiguitySetError:
        return False
    return True


def compute_bounds(
    problem: Problem,
    gamma: float,
    params: PgdParams = PgdParams(),
    warm: tuple[NDArray | None, NDArray | None] = (None, None),
) -> BoundsResult:
    """Lower and upper bound at a single ``gamma``."""
    t0 = time.perf_counter()
    bounds = bounds_from_gamma(gamma, problem.occ.pi_b_marginal)
    if not ambiguity_set_nonempty(problem, bounds, params.moments):
        raise EmptyAmbiguitySetError(f"ambiguity set empty at gamma={gamma}")
    lo = pgd_extremum("min", problem, bounds, params, [warm[0]] if warm[0] is not None else None)
    hi = pgd_extremum("max", problem, bounds, params, [warm[1]] if warm[1] is not None else None)
    diag = {
        "min": lo.diagnostics,
        "max": hi.diagnostics,
        "wall_time_ms": 1000.0 * (time.perf_counter() - t0),
        "feasibility_tol": FEAS_TOL,
    }
    return BoundsResult(gamma, lo.value, hi.value, lo.g, hi.g, True, diagnostics=diag)


def naive_estimate(problem: Problem) -> float:
    """Plug-in value with nominal weights ``1 / pi_b(a|j)``."""
    return objective(assemble(nominal_weights(problem.occ), problem))


def monotone_envelope(results: list[BoundsResult]) -> list[BoundsResult]:
    """Make feasible intervals nested in ``gamma`` (running min/max)."""
    out = []
    run_lo, run_hi = np.inf, -np.inf
    for res in results:
        if not res.feasible:
            out.append(res)
            continue
        run_lo = min(run_lo, res.lower_raw)
        run_hi = max(run_hi, res.upper_raw)
        out.append(replace(res, lower=run_lo, upper=run_hi))
    return out


def sweep_gamma(problem: Problem, gammas, params: PgdParams = PgdParams()) -> list[BoundsResult]:
    """Bounds over an ascending ``gamma`` grid, warm-started and enveloped."""
    gammas = [float(x) for x in gammas]
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be sorted ascending")
    raw: list[BoundsResult] = []
    warm: tuple[NDArray | None, NDArray | None] = (None, None)
    for gamma in gammas:
        try:
            res = compute_bounds(problem, gamma, params, warm)
            warm = (res.lower_g, res.upper_g)
        except (EmptyAmbiguitySetError, NoFeasibleIterate) as exc:
            log.warning("gamma=%s: %s", gamma, exc)
            res = BoundsResult(gamma, np.nan, np.nan, None, None, feasible=False, diagnostics={"error": str(exc)})
        raw.append(res)
    return monotone_envelope(raw)
