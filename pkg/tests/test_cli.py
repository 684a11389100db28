import hashlib
import json

import numpy as np
import pytest

from confounded_ope.cli import EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, main
from confounded_ope.config import ConfigError, ExperimentConfig, GammaGrid, config_schema, load_config
from confounded_ope.experiments import (
    BOUNDS_COLUMNS,
    CONSISTENCY_COLUMNS,
    GRIDWORLD_COLUMNS,
    ORACLE_COLUMNS,
    TRAJECTORY_COLUMNS,
    read_csv,
)

FAST_PGD = {"n_iters": 30, "n_restarts": 2}


def run(tmp_path, command, cfg: dict, *extra):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / f"out_{command}"
    return main([command, "--config", str(path), "--out", str(out), *extra]), out


def check_schema(path, columns):
    meta, rows = read_csv(path)
    assert meta["version"].startswith("confounded_ope")
    ExperimentConfig.model_validate(meta["config"])
    assert rows and list(rows[0]) == columns
    return meta, rows


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_defaults_resolved():
    cfg = load_config()
    assert cfg.T == 40000
    grid = cfg.gamma_grid.grid()
    assert len(grid) == 25 and grid[0] == pytest.approx(1.10) and grid[-1] == pytest.approx(5.47)
    np.testing.assert_allclose(np.diff(np.log(grid)), np.log(5.47 / 1.10) / 24)
    assert "pgd" in cfg.resolved() and cfg.resolved()["pgd"]["n_iters"] == 200


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"pgd": {"eta": 1}}))
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("CONFOUNDED_OPE_OUT", str(tmp_path / "x"))
    monkeypatch.setenv("CONFOUNDED_OPE_THREADS", "3")
    cfg = load_config()
    assert cfg.output_dir == str(tmp_path / "x") and cfg.threads == 3
    assert load_config(overrides={"threads": 1}).threads == 1


def test_gamma_grid_validation():
    with pytest.raises(ValueError):
        GammaGrid(gamma_min=3.0, gamma_max=2.0)
    assert GammaGrid(values=[1.0, 2.0]).grid() == [1.0, 2.0]


def test_schema_command(capsys):
    assert main(["schema"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["title"] == "ExperimentConfig"
    assert config_schema()["additionalProperties"] is False


def test_simulate_rows_and_determinism(tmp_path):
    code, out = run(tmp_path, "simulate", {"T": 10, "seed": 3})
    assert code == EXIT_OK
    meta, rows = check_schema(out / "trajectory.csv", TRAJECTORY_COLUMNS)
    assert len(rows) == 10
    first = digest(out / "trajectory.csv")
    run(tmp_path, "simulate", {"T": 10, "seed": 3})
    assert digest(out / "trajectory.csv") == first
    assert json.loads((out / "resolved_config.json").read_text())["config"]["T"] == 10


def test_seed_flag_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"T": 50}))
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert digest(tmp_path / "a" / "trajectory.csv") != digest(tmp_path / "b" / "trajectory.csv")


def test_bounds_gamma_one(tmp_path):
    code, out = run(tmp_path, "bounds", {"T": 3000, "gamma_grid": {"values": [1.0]}, "pgd": FAST_PGD})
    assert code == EXIT_OK
    _, rows = check_schema(out / "bounds.csv", BOUNDS_COLUMNS)
    row = rows[0]
    assert float(row["lower"]) == pytest.approx(float(row["naive_estimate"]), abs=1e-6)
    assert float(row["upper"]) == pytest.approx(float(row["naive_estimate"]), abs=1e-6)
    diag = json.loads((out / "bounds_diagnostics.json").read_text())
    assert np.asarray(diag["results"][0]["lower_g"]).shape == (2, 2, 2)


def test_bounds_byte_identical_except_timing(tmp_path):
    cfg = {"T": 2000, "gamma_grid": {"count": 3}, "pgd": FAST_PGD}
    _, out = run(tmp_path, "bounds", cfg)
    first = read_csv(out / "bounds.csv")
    run(tmp_path, "bounds", cfg)
    second = read_csv(out / "bounds.csv")
    assert first[0] == second[0]
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_ms"} for r in rows]
    assert strip(first[1]) == strip(second[1])


def test_bounds_from_trajectory_file(tmp_path):
    _, sim = run(tmp_path, "simulate", {"T": 2000})
    code, out = run(
        tmp_path, "bounds", {"T": 2000, "gamma_grid": {"values": [2.0]}, "pgd": FAST_PGD}, "--trajectory", str(sim / "trajectory.csv")
    )
    assert code == EXIT_OK
    check_schema(out / "bounds.csv", BOUNDS_COLUMNS)


def test_bounds_per_transition_setting(tmp_path):
    cfg = {"T": 2000, "environment": {"p_values": [0.1, 0.45]}, "gamma_grid": {"values": [3.0]}, "pgd": FAST_PGD}
    code, out = run(tmp_path, "bounds", cfg)
    assert code == EXIT_OK
    for stem in ("bounds_p0.10", "bounds_p0.45"):
        check_schema(out / f"{stem}.csv", BOUNDS_COLUMNS)


def test_consistency_single_T(tmp_path):
    cfg = {"consistency": {"T_grid": [500], "replications": 2, "gammas": [2.0]}, "pgd": FAST_PGD}
    code, out = run(tmp_path, "consistency", cfg)
    assert code == EXIT_OK
    _, rows = check_schema(out / "consistency.csv", CONSISTENCY_COLUMNS)
    assert len(rows) == 2 and all(float(r["upper_minus_reference"]) == 0.0 for r in rows)


def test_consistency_threads_match_serial(tmp_path):
    cfg = {"consistency": {"T_grid": [200, 800], "replications": 2, "gammas": [2.0]}, "pgd": FAST_PGD}
    _, out = run(tmp_path, "consistency", cfg)
    serial = read_csv(out / "consistency.csv")[1]
    _, out = run(tmp_path, "consistency", cfg, "--threads", "2")
    assert read_csv(out / "consistency.csv")[1] == serial


def test_oracle_check_pass_and_fail(tmp_path):
    base = {"population": True, "oracle": {"n_samples": 4000}, "oracle_check": {"gammas": [1.0, 2.0]}}
    code, out = run(tmp_path, "oracle-check", base)
    assert code == EXIT_OK
    _, rows = check_schema(out / "oracle_check.csv", ORACLE_COLUMNS)
    assert rows[0]["passed"] == "true"
    assert float(rows[0]["pgd_lower"]) == pytest.approx(float(rows[0]["oracle_lower"]), abs=1e-6)
    starved = dict(base, pgd={"n_iters": 1, "n_restarts": 1})
    code, out = run(tmp_path, "oracle-check", starved)
    assert code == EXIT_ORACLE
    assert json.loads((out / "oracle_check.json").read_text())["passed"] is False


def test_gridworld_sweep_schema(tmp_path):
    cfg = {
        "environment": {"kind": "gridworld"},
        "population": True,
        "gamma_grid": {"values": [1.0, 3.0]},
        "gridworld_sweep": {"etas": [0.5], "bases": ["marginal_optimal"]},
        "pgd": FAST_PGD,
    }
    code, out = run(tmp_path, "gridworld-sweep", cfg)
    assert code == EXIT_OK
    _, rows = check_schema(out / "gridworld_sweep.csv", GRIDWORLD_COLUMNS)
    assert len(rows) == 2 and rows[0]["base"] == "marginal_optimal"


def test_config_error_exit(tmp_path):
    code, _ = run(tmp_path, "bounds", {"nonsense": True})
    assert code == EXIT_CONFIG
    code, _ = run(tmp_path, "bounds", {"environment": {"p_u1": 0.7}})
    assert code == EXIT_CONFIG
    code, _ = run(tmp_path, "gridworld-sweep", {"gamma_grid": {"values": [1.0]}})
    assert code == EXIT_CONFIG
