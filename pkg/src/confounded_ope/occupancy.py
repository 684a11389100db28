"""Trajectory simulation and empirical state-action-next-state occupancy."""

from __future__ import annotations

import bisect
import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .mdp import ConfoundedMDP, FullInfoPolicy, full_stationary


@dataclass(frozen=True)
class Trajectory:
    states: NDArray[np.int_]
    actions: NDArray[np.int_]
    seed: int | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int)
        actions = np.asarray(self.actions, dtype=int)
        if states.shape != actions.shape or states.ndim != 1:
            raise ValueError("states and actions must be equal-length 1-d sequences")
        if states.size and (states.min() < 0 or actions.min() < 0):
            raise ValueError("indices must be nonnegative")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return self.states.size

    def to_csv(self, path: str | Path, comments: list[str] = ()) -> None:
        """Write ``t,state,action`` rows, preceded by ``# ``-prefixed comment lines."""
        with open(path, "w", newline="") as fh:
            for line in comments:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "state", "action"])
            for t, (s, a) in enumerate(zip(self.states.tolist(), self.actions.tolist())):
                writer.writerow([t, s, a])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.DictReader(line for line in fh if not line.startswith("#"))
            if reader.fieldnames != ["t", "state", "action"]:
                raise ValueError(f"unexpected trajectory columns {reader.fieldnames}")
            rows = [(int(r["t"]), int(r["state"]), int(r["action"])) for r in reader]
        rows.sort()
        return cls(np.array([r[1] for r in rows], dtype=int), np.array([r[2] for r in rows], dtype=int))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator fully determined by ``seed`` and a stream id tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream))))


def simulate_trajectory(
    mdp: ConfoundedMDP, pi_b: FullInfoPolicy, T: int, seed: int, stream: tuple[int, ...] = ()
) -> Trajectory:
    """Roll out ``T`` steps of the full-information chain; ``u`` is discarded."""
    if T < 1:
        raise ValueError("T must be at least 1")
    n_s, n_u, n_a = mdp.n_s, mdp.n_u, mdp.n_a
    n = n_s * n_u
    # joint kernel over (action, next full state) from each full state
    joint = np.einsum("sua,suaxy->suaxy", pi_b.pi, mdp.P).reshape(n, n_a * n)
    cdf = np.cumsum(joint, axis=1)
    cdf /= cdf[:, -1:]
    cdf_rows = [row.tolist() for row in cdf]
    rng = make_rng(seed, *stream)
    x = int(rng.integers(n))
    draws = rng.random(T).tolist()
    states = np.empty(T, dtype=int)
    actions = np.empty(T, dtype=int)
    last = n_a * n - 1
    for t in range(T):
        idx = min(bisect.bisect_right(cdf_rows[x], draws[t]), last)
        a, x_next = divmod(idx, n)
        states[t] = x // n_u
        actions[t] = a
        x = x_next
    return Trajectory(states, actions, seed)


@dataclass(frozen=True)
class EmpiricalOccupancy:
    """Normalized occupancy over (current state, action, next state).

    ``p_j`` is the current-state occupancy and plays the role of the state
    weights ``b``. ``counts``/``total`` are ``None`` for population occupancies.
    ``states`` maps compacted indices back to the original state labels.
    """

    p_jak: NDArray[np.float64]
    counts: NDArray[np.int_] | None = None
    total: int | None = None
    states: NDArray[np.int_] | None = None

    def __post_init__(self):
        p = np.array(self.p_jak, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError("p_jak must have shape (n_s, n_a, n_s)")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p_jak must be a probability table")
        p.setflags(write=False)
        object.__setattr__(self, "p_jak", p)
        if self.states is None:
            object.__setattr__(self, "states", np.arange(p.shape[0]))

    @property
    def is_population(self) -> bool:
        return self.counts is None

    @property
    def n_s(self) -> int:
        return self.p_jak.shape[0]

    @property
    def n_a(self) -> int:
        return self.p_jak.shape[1]

    @property
    def p_j(self) -> NDArray[np.float64]:
        return self.p_jak.sum(axis=(1, 2))

    @property
    def p_k(self) -> NDArray[np.float64]:
        return self.p_jak.sum(axis=(0, 1))

    @property
    def p_ja(self) -> NDArray[np.float64]:
        return self.p_jak.sum(axis=2)

    @property
    def p_ja_given_k(self) -> NDArray[np.float64]:
        pk = self.p_k
        out = np.zeros_like(self.p_jak)
        seen = pk > 0
        out[:, :, seen] = self.p_jak[:, :, seen] / pk[seen]
        return out

    @property
    def pi_b_marginal(self) -> NDArray[np.float64]:
        """Observed behavior policy ``pi_b(a | j)``; uniform on unvisited rows."""
        pja = self.p_ja
        pj = pja.sum(axis=1, keepdims=True)
        return np.where(pj > 0, pja / np.where(pj > 0, pj, 1.0), 1.0 / self.n_a)

    def to_json(self) -> dict:
        return {
            "n_s": self.n_s,
            "n_a": self.n_a,
            "states": self.states.tolist(),
            "total": self.total,
            "counts": None if self.counts is None else self.counts.tolist(),
            "p_jak": self.p_jak.tolist(),
            "p_k": self.p_k.tolist(),
            "p_ja_given_k": self.p_ja_given_k.tolist(),
            "pi_b_marginal": self.pi_b_marginal.tolist(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "EmpiricalOccupancy":
        data = json.loads(Path(path).read_text())
        counts = None if data["counts"] is None else np.asarray(data["counts"], dtype=int)
        return cls(np.asarray(data["p_jak"]), counts, data["total"], np.asarray(data["states"], dtype=int))


def estimate_occupancy(traj: Trajectory, n_s: int, n_a: int, smoothing: float = 0.0) -> EmpiricalOccupancy:
    """Transition frequencies over consecutive pairs of ``traj``.

    States that never appear as a current state are dropped (with the
    transitions leading into them) and the remaining states are re-indexed;
    ``states`` keeps the original labels. ``smoothing`` adds a pseudo-count to
    every cell of the compacted table.
    """
    if len(traj) < 2:
        raise ValueError("trajectory needs at least two steps")
    if traj.states.max() >= n_s or traj.actions.max() >= n_a:
        raise ValueError("trajectory indices exceed (n_s, n_a)")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    counts = np.zeros((n_s, n_a, n_s), dtype=np.int64)
    np.add.at(counts, (traj.states[:-1], traj.actions[:-1], traj.states[1:]), 1)
    keep = np.flatnonzero(counts.sum(axis=(1, 2)) > 0)
    counts = counts[np.ix_(keep, np.arange(n_a), keep)]
    total = int(counts.sum())
    p = (counts + smoothing) / (total + smoothing * counts.size)
    return EmpiricalOccupancy(p, counts, total, keep)


def population_occupancy(mdp: ConfoundedMDP, pi_b: FullInfoPolicy) -> EmpiricalOccupancy:
    """Exact stationary ``p(j, a, k)`` under the behavior policy."""
    d = full_stationary(mdp, pi_b)
    p = np.einsum("ju,jua,juak->jak", d, pi_b.pi, mdp.observed_transitions())
    p = np.clip(p, 0.0, None)
    return EmpiricalOccupancy(p / p.sum())
