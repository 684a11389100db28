"""The partially identified estimating equation as a linear system in ``w``.

For marginal weights ``g[k, a, j]`` the stationarity residual of a density
ratio ``w`` is ``A(g) @ w`` with

    A(g)[k, j] = sum_a p(j,a,k) pi_e(a|j) g[k,a,j] - [j == k] b[k],

and ``b`` the state occupancy. Replacing the last row by ``b`` gives a square
system whose solution against ``e_last`` is the density ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .lp import LPInfeasible, solve_lp
from .mdp import ObservedPolicy
from .occupancy import EmpiricalOccupancy
from .sensitivity import SensitivityBounds, moment_constraints

COND_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    pass


class EmptyAmbiguitySetError(RuntimeError):
    """Box plus moment constraints admit no marginal weights."""


@dataclass(frozen=True)
class Problem:
    """Data shared by every evaluation: occupancy, evaluation policy, reward.

    ``pi_e`` and ``Phi`` are restricted to the occupancy's visited states.
    ``coef[k, a, j] = p(j,a,k) * pi_e(a|j)``.
    """

    occ: EmpiricalOccupancy
    pi_e: NDArray[np.float64]
    Phi: NDArray[np.float64]
    coef: NDArray[np.float64]

    @classmethod
    def build(cls, occ: EmpiricalOccupancy, pi_e: ObservedPolicy | NDArray, Phi) -> "Problem":
        pi = pi_e.pi if isinstance(pi_e, ObservedPolicy) else np.asarray(pi_e, dtype=float)
        Phi = np.asarray(Phi, dtype=float)
        if pi.shape[1] != occ.n_a:
            raise ValueError(f"evaluation policy has {pi.shape[1]} actions, occupancy has {occ.n_a}")
        if pi.shape[0] != occ.n_s:
            pi = pi[occ.states]
        if Phi.shape[0] != occ.n_s:
            Phi = Phi[occ.states]
        if pi.shape[0] != occ.n_s or Phi.shape != (occ.n_s,):
            raise ValueError("evaluation policy / reward do not match occupancy states")
        coef = np.einsum("jak,ja->kaj", occ.p_jak, pi)
        return cls(occ, pi, Phi, coef)

    @property
    def n_s(self) -> int:
        return self.occ.n_s

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.occ.n_s, self.occ.n_a, self.occ.n_s)

    @property
    def b(self) -> NDArray[np.float64]:
        return self.occ.p_j

    @property
    def varphi(self) -> NDArray[np.float64]:
        return self.Phi * self.b


@dataclass(frozen=True)
class SystemMatrices:
    A: NDArray[np.float64]
    A_tilde: NDArray[np.float64]
    b: NDArray[np.float64]
    v: NDArray[np.float64]
    varphi: NDArray[np.float64]
    coef: NDArray[np.float64]


def stationarity_matrix(problem: Problem, g: NDArray) -> NDArray[np.float64]:
    g = np.asarray(g, dtype=float)
    if g.shape != problem.shape:
        raise ValueError(f"g must have shape {problem.shape}, got {g.shape}")
    return np.einsum("kaj,kaj->kj", problem.coef, g) - np.diag(problem.b)


def assemble(g: NDArray, occ: EmpiricalOccupancy | Problem, pi_e=None, Phi=None, replace_row: int | None = None) -> SystemMatrices:
    """Build ``A(g)``, the row-replaced ``A_tilde`` and the right-hand side.

    Accepts either a prepared :class:`Problem` or ``(occ, pi_e, Phi)``.
    """
    problem = occ if isinstance(occ, Problem) else Problem.build(occ, pi_e, Phi)
    A = stationarity_matrix(problem, g)
    n = problem.n_s
    row = n - 1 if replace_row is None else replace_row
    A_tilde = A.copy()
    A_tilde[row] = problem.b
    v = np.zeros(n)
    v[row] = 1.0
    return SystemMatrices(A, A_tilde, problem.b.copy(), v, problem.varphi, problem.coef)


def solve_w(sys: SystemMatrices) -> NDArray[np.float64]:
    cond = np.linalg.cond(sys.A_tilde)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystemError(f"row-replaced system is singular (cond={cond:.3e})")
    return np.linalg.solve(sys.A_tilde, sys.v)


def objective(sys: SystemMatrices) -> float:
    return float(sys.varphi @ solve_w(sys))


def gradient(sys: SystemMatrices, g: NDArray | None = None) -> NDArray[np.float64]:
    """Derivative of ``varphi @ A_tilde^{-1} v`` with respect to ``g[k, a, j]``.

    Only rows of ``A`` that survive the replacement depend on ``g``, so the
    replaced row's entries are zero.
    """
    w = solve_w(sys)
    lam = np.linalg.solve(sys.A_tilde.T, sys.varphi)
    replaced = int(np.argmax(sys.v))
    lam = lam.copy()
    lam[replaced] = 0.0
    return -sys.coef * lam[:, None, None] * w[None, None, :]


def _residual_scale(problem: Problem) -> NDArray[np.float64]:
    b = problem.b
    return np.where(b > 0, 1.0 / np.where(b > 0, b, 1.0), 0.0)


def feasibility_value(
    w: NDArray,
    problem: Problem,
    bounds: SensitivityBounds,
    moments: str = "state",
) -> tuple[float, NDArray[np.float64]]:
    """Smallest L1 estimating-equation residual over the ambiguity set.

    Residuals are taken conditionally on the next state, i.e. row ``k`` of
    ``A(g) @ w`` divided by ``b[k]``. Returns ``(value, minimizing g)``;
    raises :class:`EmptyAmbiguitySetError` when no ``g`` satisfies the box and
    moment constraints.
    """
    w = np.asarray(w, dtype=float)
    n, n_a, _ = problem.shape
    size = n * n_a * n
    scale = _residual_scale(problem)
    # residual_k = scale_k * (sum_{a,j} coef[k,a,j] w_j g[k,a,j] - b_k w_k)
    R = np.zeros((n, size))
    for k in range(n):
        block = np.zeros((n, n_a, n))
        block[k] = problem.coef[k] * w[None, :] * scale[k]
        R[k] = block.ravel()
    offset = problem.b * w * scale
    E, r, _ = moment_constraints(problem.occ, moments)
    lo, hi = bounds.box(n)
    c = np.concatenate([np.zeros(size), np.ones(n)])
    eye = np.eye(n)
    A_ub = np.block([[R, -eye], [-R, -eye]])
    b_ub = np.concatenate([offset, -offset])
    A_eq = np.hstack([E, np.zeros((E.shape[0], n))])
    box = list(zip(lo.ravel(), hi.ravel())) + [(0, None)] * n
    try:
        x, val = solve_lp(c, A_ub, b_ub, A_eq, r, box)
    except LPInfeasible as exc:
        raise EmptyAmbiguitySetError("ambiguity set is empty") from exc
    return max(val, 0.0), x[:size].reshape(problem.shape)
