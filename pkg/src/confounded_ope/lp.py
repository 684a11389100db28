"""Thin wrapper around HiGHS (via scipy) for the small dense LPs used here."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

PRIMAL_TOL = 1e-9


class LPInfeasible(RuntimeError):
    pass


class LPFailure(RuntimeError):
    pass


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Minimize ``c @ x``; returns ``(x, value)``.

    Raises :class:`LPInfeasible` for infeasible problems and :class:`LPFailure`
    for any other solver status.
    """
    res = linprog(
        np.asarray(c, dtype=float),
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": PRIMAL_TOL, "dual_feasibility_tolerance": PRIMAL_TOL},
    )
    if res.status == 2:
        raise LPInfeasible(res.message)
    if res.status != 0:
        raise LPFailure(res.message)
    return res.x, float(res.fun)
