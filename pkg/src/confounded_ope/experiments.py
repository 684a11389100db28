"""Experiment runners behind the CLI and their file formats.

Tabular results are CSV files whose leading ``#`` lines carry the code
version and the resolved configuration; witnesses and diagnostics go to JSON.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .bounds import BoundsResult, naive_estimate, pgd_extremum, sweep_gamma, compute_bounds
from .config import ExperimentConfig, EvaluationPolicyConfig, build_environment, build_evaluation_policy
from .mdp import ConfoundedMDP, FullInfoPolicy, ObservedPolicy, policy_value
from .occupancy import EmpiricalOccupancy, Trajectory, estimate_occupancy, population_occupancy, simulate_trajectory
from .oracle import brute_force_bounds
from .sensitivity import bounds_from_gamma
from .system import Problem

BOUNDS_COLUMNS = ["gamma", "lower", "upper", "lower_raw", "upper_raw", "naive_estimate", "feasible", "wall_time_ms"]
CONSISTENCY_COLUMNS = ["T", "replication", "gamma", "upper", "upper_minus_reference"]
ORACLE_COLUMNS = [
    "gamma",
    "pgd_lower",
    "pgd_upper",
    "oracle_lower",
    "oracle_upper",
    "rel_err_lower",
    "rel_err_upper",
    "contained",
    "passed",
]
GRIDWORLD_COLUMNS = ["base", "eta", "true_value"] + BOUNDS_COLUMNS
TRAJECTORY_COLUMNS = ["t", "state", "action"]


def version_string() -> str:
    try:
        return f"confounded_ope {metadata.version('artifact')}"
    except metadata.PackageNotFoundError:
        return "confounded_ope unknown"


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def header_lines(cfg: ExperimentConfig) -> list[str]:
    return [f"version: {version_string()}", "config: " + json.dumps(cfg.resolved(), sort_keys=True, separators=(",", ":"))]


def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else repr(float(x))
    return str(x)


def write_csv(path: Path, columns: list[str], rows: Iterable[dict], cfg: ExperimentConfig) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header_lines(cfg):
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path


def read_csv(path: str | Path) -> tuple[dict, list[dict[str, str]]]:
    """``(meta, rows)``; ``meta`` holds the parsed ``version`` and ``config`` headers."""
    meta: dict = {}
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition(": ")
                meta[key] = json.loads(value) if key == "config" else value
            else:
                body.append(line)
    return meta, list(csv.DictReader(body))


def write_json(path: Path, payload: dict, cfg: ExperimentConfig) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": version_string(), "config": cfg.resolved(), **payload}
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return path


def _pmap(fn: Callable, items: list, threads: int) -> list:
    """Ordered map; worker processes when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Shared pipeline pieces
# ---------------------------------------------------------------------------


@dataclass
class Instance:
    mdp: ConfoundedMDP
    pi_b: FullInfoPolicy
    pi_e: ObservedPolicy
    occ: EmpiricalOccupancy
    problem: Problem
    true_value: float


def estimate(cfg: ExperimentConfig, mdp: ConfoundedMDP, pi_b: FullInfoPolicy, traj: Trajectory | None = None) -> EmpiricalOccupancy:
    if cfg.population:
        return population_occupancy(mdp, pi_b)
    traj = traj if traj is not None else simulate_trajectory(mdp, pi_b, cfg.T, cfg.seed)
    return estimate_occupancy(traj, mdp.n_s, mdp.n_a)


def build_instance(
    cfg: ExperimentConfig,
    p: float | None = None,
    policy: EvaluationPolicyConfig | None = None,
    traj: Trajectory | None = None,
) -> Instance:
    mdp, pi_b = build_environment(cfg, p)
    pi_e = build_evaluation_policy(cfg, mdp, policy)
    occ = estimate(cfg, mdp, pi_b, traj)
    return Instance(mdp, pi_b, pi_e, occ, Problem.build(occ, pi_e, mdp.Phi), policy_value(mdp, pi_e))


def bounds_rows(results: list[BoundsResult], naive: float) -> list[dict]:
    return [
        {
            "gamma": r.gamma,
            "lower": r.lower,
            "upper": r.upper,
            "lower_raw": r.lower_raw,
            "upper_raw": r.upper_raw,
            "naive_estimate": naive,
            "feasible": r.feasible,
            "wall_time_ms": r.diagnostics.get("wall_time_ms", 0.0),
        }
        for r in results
    ]


def witnesses(results: list[BoundsResult]) -> list[dict]:
    return [
        {
            "gamma": r.gamma,
            "feasible": r.feasible,
            "lower": r.lower,
            "upper": r.upper,
            "lower_raw": r.lower_raw,
            "upper_raw": r.upper_raw,
            "lower_g": r.lower_g,
            "upper_g": r.upper_g,
            "diagnostics": r.diagnostics,
        }
        for r in results
    ]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig, out: Path) -> dict:
    mdp, pi_b = build_environment(cfg)
    traj = simulate_trajectory(mdp, pi_b, cfg.T, cfg.seed)
    path = out / "trajectory.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(path, header_lines(cfg))
    write_json(out / "resolved_config.json", {}, cfg)
    occ = estimate_occupancy(traj, mdp.n_s, mdp.n_a)
    freq = np.bincount(traj.states, minlength=mdp.n_s) / len(traj)
    pi_hat = np.full((mdp.n_s, mdp.n_a), np.nan)
    pi_hat[occ.states] = occ.pi_b_marginal
    return {"trajectory": str(path), "state_frequencies": freq.tolist(), "pi_b_hat": pi_hat.tolist()}


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _bounds_task(args: tuple[ExperimentConfig, float | None, Trajectory | None]) -> dict:
    cfg, p, traj = args
    inst = build_instance(cfg, p, traj=traj)
    results = sweep_gamma(inst.problem, cfg.gamma_grid.grid(), cfg.pgd_params())
    return {
        "p": p,
        "rows": bounds_rows(results, naive_estimate(inst.problem)),
        "witnesses": witnesses(results),
        "occupancy": inst.occ.to_json(),
        "true_value": inst.true_value,
    }


def run_bounds(cfg: ExperimentConfig, out: Path, traj: Trajectory | None = None) -> list[dict]:
    """One ``gamma`` sweep per transition setting; returns per-setting summaries."""
    p_values = getattr(cfg.environment, "p_values", None) or [None]
    tasks = [(cfg, p, traj) for p in p_values]
    summaries = []
    for res in _pmap(_bounds_task, tasks, cfg.threads):
        stem = "bounds" if res["p"] is None else f"bounds_p{res['p']:.2f}"
        csv_path = write_csv(out / f"{stem}.csv", BOUNDS_COLUMNS, res["rows"], cfg)
        json_path = write_json(
            out / f"{stem}_diagnostics.json",
            {"p": res["p"], "true_value": res["true_value"], "occupancy": res["occupancy"], "results": res["witnesses"]},
            cfg,
        )
        summaries.append({"p": res["p"], "csv": str(csv_path), "diagnostics": str(json_path), "rows": res["rows"]})
    return summaries


# ---------------------------------------------------------------------------
# consistency
# ---------------------------------------------------------------------------


def _consistency_task(args: tuple[ExperimentConfig, int]) -> list[dict]:
    cfg, rep = args
    mdp, pi_b = build_environment(cfg)
    pi_e = build_evaluation_policy(cfg, mdp)
    grid = cfg.consistency.T_grid
    # nested prefixes of one long trajectory per replication
    full = simulate_trajectory(mdp, pi_b, grid[-1], cfg.seed, stream=(rep,))
    params = cfg.pgd_params()
    rows = []
    for gamma in cfg.consistency.gammas:
        uppers = []
        for T in grid:
            prefix = Trajectory(full.states[:T], full.actions[:T], full.seed)
            problem = Problem.build(estimate_occupancy(prefix, mdp.n_s, mdp.n_a), pi_e, mdp.Phi)
            bounds = bounds_from_gamma(gamma, problem.occ.pi_b_marginal)
            uppers.append(pgd_extremum("max", problem, bounds, params).value)
        reference = uppers[-1]
        rows += [
            {"T": T, "replication": rep, "gamma": gamma, "upper": u, "upper_minus_reference": u - reference}
            for T, u in zip(grid, uppers)
        ]
    return rows


def run_consistency(cfg: ExperimentConfig, out: Path) -> tuple[Path, list[dict]]:
    """Upper bound over nested trajectory prefixes, normalized by the longest prefix."""
    chunks = _pmap(_consistency_task, [(cfg, rep) for rep in range(cfg.consistency.replications)], cfg.threads)
    rows = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r["gamma"], r["T"], r["replication"]))
    return write_csv(out / "consistency.csv", CONSISTENCY_COLUMNS, rows, cfg), rows


def consistency_summary(rows: list[dict]) -> dict:
    """Median absolute and signed differences per ``(gamma, T)``."""
    out: dict = {}
    for gamma in sorted({r["gamma"] for r in rows}):
        per_T = {}
        for T in sorted({r["T"] for r in rows}):
            diffs = np.array([r["upper_minus_reference"] for r in rows if r["gamma"] == gamma and r["T"] == T])
            per_T[T] = {"median_abs": float(np.median(np.abs(diffs))), "median_signed": float(np.median(diffs))}
        out[gamma] = per_T
    return out


# ---------------------------------------------------------------------------
# oracle-check
# ---------------------------------------------------------------------------


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-12)


def run_oracle_check(cfg: ExperimentConfig, out: Path) -> tuple[bool, list[dict]]:
    """PGD against the brute-force oracle at each configured ``gamma``."""
    inst = build_instance(cfg)
    chk = cfg.oracle_check
    rows, details = [], []
    for gamma in chk.gammas:
        bounds = bounds_from_gamma(gamma, inst.occ.pi_b_marginal)
        t0 = time.perf_counter()
        pgd = compute_bounds(inst.problem, gamma, cfg.pgd_params())
        t_pgd = time.perf_counter() - t0
        orc = brute_force_bounds(inst.problem, bounds, cfg.oracle_params(), cfg.moments)
        err_lo, err_hi = _rel_err(pgd.lower, orc.lower), _rel_err(pgd.upper, orc.upper)
        contained = bool(pgd.lower >= orc.lower - chk.containment_slack and pgd.upper <= orc.upper + chk.containment_slack)
        passed = bool(contained and err_lo <= chk.rel_tol and err_hi <= chk.rel_tol)
        rows.append(
            {
                "gamma": gamma,
                "pgd_lower": pgd.lower,
                "pgd_upper": pgd.upper,
                "oracle_lower": orc.lower,
                "oracle_upper": orc.upper,
                "rel_err_lower": err_lo,
                "rel_err_upper": err_hi,
                "contained": contained,
                "passed": passed,
            }
        )
        details.append(
            {
                "gamma": gamma,
                "pgd_seconds": t_pgd,
                "pgd_lower_g": pgd.lower_g,
                "pgd_upper_g": pgd.upper_g,
                "oracle_lower_g": orc.lower_g,
                "oracle_upper_g": orc.upper_g,
                "oracle_diagnostics": orc.diagnostics,
            }
        )
    ok = all(r["passed"] for r in rows)
    write_csv(out / "oracle_check.csv", ORACLE_COLUMNS, rows, cfg)
    write_json(out / "oracle_check.json", {"passed": ok, "rel_tol": chk.rel_tol, "results": details}, cfg)
    return ok, rows


# ---------------------------------------------------------------------------
# gridworld-sweep
# ---------------------------------------------------------------------------


def _gridworld_task(args: tuple[ExperimentConfig, str, float]) -> dict:
    cfg, base, eta = args
    inst = build_instance(cfg, policy=EvaluationPolicyConfig(kind="mixture", eta=eta, base=base))
    results = sweep_gamma(inst.problem, cfg.gamma_grid.grid(), cfg.pgd_params())
    naive = naive_estimate(inst.problem)
    rows = [{"base": base, "eta": eta, "true_value": inst.true_value, **row} for row in bounds_rows(results, naive)]
    return {"base": base, "eta": eta, "rows": rows, "witnesses": witnesses(results)}


def run_gridworld_sweep(cfg: ExperimentConfig, out: Path) -> list[dict]:
    """Bounds for every (base policy, mixture weight) pair of the gridworld sweep."""
    sweep = cfg.gridworld_sweep
    tasks = [(cfg, base, eta) for base in sweep.bases for eta in sweep.etas]
    results = _pmap(_gridworld_task, tasks, cfg.threads)
    rows = [row for res in results for row in res["rows"]]
    write_csv(out / "gridworld_sweep.csv", GRIDWORLD_COLUMNS, rows, cfg)
    write_json(
        out / "gridworld_sweep.json",
        {"results": [{"base": r["base"], "eta": r["eta"], "witnesses": r["witnesses"]} for r in results]},
        cfg,
    )
    return rows
