"""Marginal sensitivity model: weight boxes from Gamma and ambiguity-set membership.

Marginal weights are stored as ``g[k, a, j]`` (next state, action, current
state), the inverse-propensity weight of action ``a`` at ``j`` conditional on
landing in ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .occupancy import EmpiricalOccupancy

MOMENT_MODES = ("state", "action")


@dataclass(frozen=True)
class SensitivityBounds:
    gamma: float
    l: NDArray[np.float64]
    m: NDArray[np.float64]

    def box(self, n_s: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Lower/upper tensors broadcast to the ``g[k, a, j]`` layout."""
        lo = np.broadcast_to(self.l.T[None, :, :], (n_s, *self.l.T.shape)).copy()
        hi = np.broadcast_to(self.m.T[None, :, :], (n_s, *self.m.T.shape)).copy()
        return lo, hi


def bounds_from_gamma(gamma: float, pi_b_marginal: NDArray) -> SensitivityBounds:
    """Box on ``1 / pi_b(a|s,u)`` implied by the odds-ratio bound ``Gamma``.

    ``lower = 1 + (1/pi - 1) / Gamma`` and ``upper = 1 + Gamma (1/pi - 1)``.
    """
    if not np.isfinite(gamma) or gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    pi = np.asarray(pi_b_marginal, dtype=float)
    if np.any(pi <= 0):
        raise ValueError("behavior propensity of zero: no overlap")
    if np.any(pi > 1):
        raise ValueError("behavior propensities must be <= 1")
    excess = 1.0 / pi - 1.0
    return SensitivityBounds(float(gamma), 1.0 + excess / gamma, 1.0 + gamma * excess)


def nominal_weights(occ: EmpiricalOccupancy) -> NDArray[np.float64]:
    """``g_k(a|j) = 1 / pi_b(a|j)`` broadcast over next states ``k``."""
    inv = 1.0 / occ.pi_b_marginal
    return np.broadcast_to(inv.T[None, :, :], (occ.n_s, occ.n_a, occ.n_s)).copy()


def moment_constraints(occ: EmpiricalOccupancy, mode: str = "state") -> tuple[NDArray, NDArray, list[tuple]]:
    """Linear equalities ``E @ g.ravel() = r`` on the ``g[k, a, j]`` layout.

    ``state``: for every visited ``(j, a)``, ``sum_k p(j,a,k) g_k(a|j) = p(j)``.
    ``action``: the action-marginal aggregate ``sum_{j,k} p(j,a,k) g_k(a|j) = 1``.
    Returns ``(E, r, labels)``.
    """
    n_s, n_a = occ.n_s, occ.n_a
    coef = np.transpose(occ.p_jak, (2, 1, 0))  # [k, a, j]
    rows, rhs, labels = [], [], []
    if mode == "state":
        pj = occ.p_j
        for j in range(n_s):
            for a in range(n_a):
                if occ.p_ja[j, a] <= 0:
                    continue
                row = np.zeros((n_s, n_a, n_s))
                row[:, a, j] = coef[:, a, j]
                rows.append(row.ravel())
                rhs.append(pj[j])
                labels.append(("state", j, a))
    elif mode == "action":
        for a in range(n_a):
            row = np.zeros((n_s, n_a, n_s))
            row[:, a, :] = coef[:, a, :]
            if not row.any():
                continue
            rows.append(row.ravel())
            rhs.append(1.0)
            labels.append(("action", a))
    else:
        raise ValueError(f"unknown moment mode {mode!r}; expected one of {MOMENT_MODES}")
    size = n_s * n_a * n_s
    E = np.array(rows).reshape(len(rows), size)
    return E, np.array(rhs), labels


def project_state_moments(G: NDArray, occ: EmpiricalOccupancy, bounds: SensitivityBounds) -> NDArray[np.float64]:
    """Exact L1 repair of ``G[..., k, a, j]`` onto the box plus per-state moments.

    For each ``(j, a)`` the single constraint ``sum_k p(j,a,k) g_k = p(j)`` is
    met by moving the coordinates with the largest ``p(j,a,k)`` first, which
    is the cheapest change in L1.
    """
    G = np.array(G, dtype=float, copy=True)
    single = G.ndim == 3
    lo, hi = bounds.box(occ.n_s)
    G = np.clip(G[None] if single else G, lo, hi)
    c = np.transpose(occ.p_jak, (2, 1, 0))  # [k, a, j]
    order = np.argsort(-c, axis=0, kind="stable")
    cw = np.take_along_axis(c, order, 0)
    x = np.take_along_axis(G, order[None], 1)
    lo_o = np.take_along_axis(lo, order, 0)
    hi_o = np.take_along_axis(hi, order, 0)
    deficit = occ.p_j[None, None, :] - np.sum(x * cw, axis=1)
    # capacity (in constraint units) in the preferred order; zero where p = 0
    room_up = (hi_o - x) * cw
    room_dn = (x - lo_o) * cw
    use_up = np.clip(np.clip(deficit, 0, None)[:, None] - (np.cumsum(room_up, axis=1) - room_up), 0, room_up)
    use_dn = np.clip(np.clip(-deficit, 0, None)[:, None] - (np.cumsum(room_dn, axis=1) - room_dn), 0, room_dn)
    moved = x + (use_up - use_dn) / np.where(cw > 0, cw, 1.0)
    # (j, a) pairs never visited carry no constraint
    visited = (occ.p_ja.T > 0)[None, None]
    np.put_along_axis(G, order[None], np.where(visited, moved, x), 1)
    return G[0] if single else G


@dataclass
class MembershipReport:
    ok: bool
    violations: list[dict] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def is_in_ambiguity_set(
    g: NDArray,
    occ: EmpiricalOccupancy,
    bounds: SensitivityBounds,
    tol: float | None = None,
    moments: str = "state",
) -> MembershipReport:
    """Box and moment membership check with a per-constraint violation list.

    Box constraints are checked only where ``p(j,a,k) > 0``; other entries do
    not enter any estimating equation. ``tol`` defaults to 1e-8 for population
    occupancies and 1e-4 for empirical ones.
    """
    if tol is None:
        tol = 1e-8 if occ.is_population else 1e-4
    g = np.asarray(g, dtype=float)
    n_s, n_a = occ.n_s, occ.n_a
    if g.shape != (n_s, n_a, n_s):
        return MembershipReport(False, [{"kind": "shape", "expected": (n_s, n_a, n_s), "got": g.shape}])
    lo, hi = bounds.box(n_s)
    support = np.transpose(occ.p_jak, (2, 1, 0)) > 0
    violations: list[dict] = []
    for kind, excess in (("lower", lo - g), ("upper", g - hi)):
        bad = np.argwhere(support & (excess > tol))
        for k, a, j in bad:
            violations.append({"kind": kind, "k": int(k), "a": int(a), "j": int(j), "magnitude": float(excess[k, a, j])})
    E, r, labels = moment_constraints(occ, moments)
    resid = E @ g.ravel() - r
    for label, res in zip(labels, resid):
        if abs(res) > tol:
            violations.append({"kind": "moment", "constraint": label, "magnitude": float(abs(res))})
    return MembershipReport(not violations, violations)
