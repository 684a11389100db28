"""Experiment configuration: a validated JSON document with explicit defaults.

Unknown keys are rejected at every level. The resolved configuration (all
defaults filled in) is embedded in every output file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Discriminator, Field, Tag, ValidationError, field_validator, model_validator

from .bounds import PgdParams
from .environments import (
    GridworldParams,
    RandomWalkParams,
    build_gridworld,
    build_random_walk,
    gridworld_behavior,
    gridworld_policies,
)
from .mdp import ConfoundedMDP, FullInfoPolicy, ObservedPolicy
from .oracle import OracleParams

ENV_OUT = "CONFOUNDED_OPE_OUT"
ENV_THREADS = "CONFOUNDED_OPE_THREADS"

Prob = Annotated[float, Field(ge=0.0, le=1.0)]


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RandomWalkEnv(_Strict):
    kind: Literal["random_walk"] = "random_walk"
    p_u1: Prob = 0.3
    p_u2: Prob = 0.3
    u_dist: tuple[Prob, Prob] = (0.5, 0.5)
    Phi: tuple[float, float] = (1.0, 2.0)
    # extra transition settings for the bounds command; one output file each
    p_values: list[Prob] | None = None

    def params(self, behavior: "BehaviorConfig", p: float | None = None) -> RandomWalkParams:
        p_u1, p_u2 = (self.p_u1, self.p_u2) if p is None else (p, p)
        return RandomWalkParams(p_u1, p_u2, behavior.pi_a1_given_u1, self.u_dist, self.Phi)


class GridworldEnv(_Strict):
    kind: Literal["gridworld"] = "gridworld"
    success_prob: Prob = 0.8
    slip_prob: Prob = 0.1
    wind_prob: Prob = 0.5
    goal_cell: tuple[int, int] = (0, 2)
    hazard_cells: tuple[tuple[int, int], ...] = ((1, 1), (2, 1))
    goal_reward: float = 1.0
    hazard_reward: float = -0.3

    def params(self) -> GridworldParams:
        return GridworldParams(**self.model_dump(exclude={"kind"}))


class BehaviorConfig(_Strict):
    """Behavior policy: ``pi_a1_given_u1`` for the random walk, ``epsilon`` for the gridworld."""

    pi_a1_given_u1: Prob | tuple[Prob, Prob] = 0.25
    epsilon: Prob = 0.5


class EvaluationPolicyConfig(_Strict):
    """Observed-state evaluation policy.

    ``table`` gives ``pi_e(a|s)`` rows directly and is only read when
    ``kind == "table"``.
    """

    kind: Literal["uniform", "u0_optimal", "marginal_optimal", "mixture", "table"] = "uniform"
    eta: Prob = 0.55
    base: Literal["u0_optimal", "marginal_optimal"] = "u0_optimal"
    table: list[list[Prob]] | None = None

    @model_validator(mode="after")
    def _table_present(self):
        if self.kind == "table" and not self.table:
            raise ValueError("evaluation_policy.table is required when kind='table'")
        return self


class GammaGrid(_Strict):
    """``count`` values spaced evenly in ``log gamma`` over ``[gamma_min, gamma_max]``.

    ``values`` overrides the generated grid.
    """

    count: int = Field(25, ge=1)
    gamma_min: float = Field(1.10, ge=1.0)
    gamma_max: float = Field(5.47, ge=1.0)
    values: list[Annotated[float, Field(ge=1.0)]] | None = None

    @model_validator(mode="after")
    def _ordered(self):
        if self.gamma_max < self.gamma_min:
            raise ValueError("gamma_max must be >= gamma_min")
        if self.values is not None and sorted(self.values) != list(self.values):
            raise ValueError("gamma values must be ascending")
        return self

    def grid(self) -> list[float]:
        if self.values is not None:
            return [float(x) for x in self.values]
        if self.count == 1:
            return [float(self.gamma_min)]
        return np.exp(np.linspace(np.log(self.gamma_min), np.log(self.gamma_max), self.count)).tolist()


class PgdConfig(_Strict):
    eta0: float = Field(0.5, gt=0)
    kappa: float = Field(0.5, gt=0, le=1)
    n_iters: int = Field(200, ge=1)
    n_restarts: int = Field(10, ge=1)
    repair_rounds: int = Field(3, ge=1)
    tangent_step: bool = True
    patience: int = Field(25, ge=1)

    def params(self, seed: int, moments: str) -> PgdParams:
        return PgdParams(seed=seed, moments=moments, **self.model_dump())


class OracleConfig(_Strict):
    n_samples: int = Field(20000, ge=1)
    n_polish: int = Field(5, ge=1)
    n_candidates: int = Field(8, ge=1)

    def params(self, seed: int) -> OracleParams:
        return OracleParams(seed=seed, **self.model_dump())


class ConsistencyConfig(_Strict):
    T_grid: list[Annotated[int, Field(ge=2)]] = [250, 1000, 4000, 10000]
    replications: int = Field(10, ge=1)
    gammas: list[Annotated[float, Field(ge=1.0)]] = [1.5, 3.0, 5.0]

    @field_validator("T_grid")
    @classmethod
    def _ascending(cls, v):
        if sorted(set(v)) != list(v):
            raise ValueError("T_grid must be strictly ascending")
        return v


class OracleCheckConfig(_Strict):
    gammas: list[Annotated[float, Field(ge=1.0)]] = [1.0, 1.5, 3.0]
    rel_tol: float = Field(0.05, gt=0)
    containment_slack: float = Field(1e-6, ge=0)


class GridworldSweepConfig(_Strict):
    etas: list[Prob] = [0.3, 0.55, 0.8]
    bases: list[Literal["u0_optimal", "marginal_optimal"]] = ["u0_optimal", "marginal_optimal"]


def _env_kind(value) -> str:
    if isinstance(value, dict):
        return value.get("kind", "random_walk")
    return getattr(value, "kind", "random_walk")


Environment = Annotated[
    Union[Annotated[RandomWalkEnv, Tag("random_walk")], Annotated[GridworldEnv, Tag("gridworld")]],
    Discriminator(_env_kind),
]


class ExperimentConfig(_Strict):
    environment: Environment = RandomWalkEnv()
    behavior: BehaviorConfig = BehaviorConfig()
    evaluation_policy: EvaluationPolicyConfig = EvaluationPolicyConfig()
    T: int = Field(40000, ge=2)
    seed: int = Field(0, ge=0)
    population: bool = False
    moments: Literal["state", "action"] = "state"
    gamma_grid: GammaGrid = GammaGrid()
    pgd: PgdConfig = PgdConfig()
    oracle: OracleConfig = OracleConfig()
    consistency: ConsistencyConfig = ConsistencyConfig()
    oracle_check: OracleCheckConfig = OracleCheckConfig()
    gridworld_sweep: GridworldSweepConfig = GridworldSweepConfig()
    output_dir: str = "results"
    threads: int = Field(1, ge=1)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")

    def pgd_params(self) -> PgdParams:
        return self.pgd.params(self.seed, self.moments)

    def oracle_params(self) -> OracleParams:
        return self.oracle.params(self.seed)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON config (or defaults), apply env-var and explicit overrides.

    Environment overrides cover only the output directory and thread count;
    explicit ``overrides`` (from command-line flags) take precedence.
    """
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    if ENV_OUT in os.environ:
        data["output_dir"] = os.environ[ENV_OUT]
    if ENV_THREADS in os.environ:
        data["threads"] = os.environ[ENV_THREADS]
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def build_environment(cfg: ExperimentConfig, p: float | None = None) -> tuple[ConfoundedMDP, FullInfoPolicy]:
    """The MDP and its full-information behavior policy."""
    env = cfg.environment
    if isinstance(env, RandomWalkEnv):
        return build_random_walk(env.params(cfg.behavior, p))
    mdp = build_gridworld(env.params())
    return mdp, gridworld_behavior(mdp, cfg.behavior.epsilon)


def build_evaluation_policy(cfg: ExperimentConfig, mdp: ConfoundedMDP, spec: EvaluationPolicyConfig | None = None) -> ObservedPolicy:
    spec = spec or cfg.evaluation_policy
    if spec.kind == "uniform":
        return ObservedPolicy.uniform(mdp.n_s, mdp.n_a)
    if spec.kind == "table":
        table = np.asarray(spec.table, dtype=float)
        if table.shape != (mdp.n_s, mdp.n_a):
            raise ConfigError(f"evaluation_policy.table must have shape {(mdp.n_s, mdp.n_a)}")
        try:
            return ObservedPolicy(table)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if not isinstance(cfg.environment, GridworldEnv):
        raise ConfigError(f"evaluation policy {spec.kind!r} is only defined for the gridworld")
    if spec.kind == "mixture":
        return gridworld_policies(mdp, "mixture", spec.eta, spec.base)
    return gridworld_policies(mdp, spec.kind)
