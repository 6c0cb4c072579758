import json

import pytest

from stableavg.cli import main
from stableavg.experiments import (EXPERIMENTS, ConfigError, ExperimentConfig, derive_seed,
                                   run_experiment)

EXPECTED = {"stable-cf", "invariant-ks", "mixing", "contraction", "variational", "moments",
            "poisson-oracle", "corrector-residual", "corrector-bounds", "centering",
            "averaged-drift", "weak-convergence", "martingale-residual"}


def test_builtins_registered():
    assert EXPECTED <= set(EXPERIMENTS)
    assert {e.criterion for e in EXPERIMENTS.values() if e.criterion} == set(range(1, 14))


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in EXPECTED)


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "r"
    code = main(["run", "--experiment", "stable-cf", "--out", str(out), "--set", "n=20000"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["budgets"] == {"n": 20000}
    assert manifest["stream_seed"] == derive_seed(manifest["seed"], "stable-cf")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["criteria"][0]["criterion"] == 1 and summary["status"] == "PASS"
    rows = (out / "stable-cf.csv").read_text().splitlines()
    assert rows[0].split(",")[-1] == "anchor" and len(rows) == 10
    assert "criterion  1 PASS" in capsys.readouterr().out


def test_rerun_from_manifest_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--experiment", "contraction", "--out", str(a), "--set", "n_paths=40"]) == 0
    assert main(["run", "--config", str(a / "manifest.json"), "--out", str(b), "--workers", "3"]) == 0
    assert (a / "contraction.csv").read_bytes() == (b / "contraction.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(experiment="stable-cf", seed=1, budgets=dict(n=1000))))
    code = main(["run", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "o"),
                 "--set", "alphas=[1.5]"])
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["seed"] == 2
    assert manifest["config"]["budgets"] == {"n": 1000, "alphas": [1.5]}
    assert code in (0, 1)


def test_r0_violation_needs_force(tmp_path, capsys):
    assert main(["validate-config", "--experiment", "stable-cf", "--r0", "0.9"]) == 1
    assert "r0 outside (0, 1/3)" in capsys.readouterr().out
    args = ["run", "--experiment", "stable-cf", "--r0", "0.9", "--out", str(tmp_path),
            "--set", "n=1000"]
    assert main(args) == 2
    assert main(args + ["--force"]) in (0, 1)
    assert (tmp_path / "summary.json").exists()


def test_validate_clean_config(capsys):
    assert main(["validate-config", "--experiment", "mixing", "--preset", "toy"]) == 0


@pytest.mark.parametrize("argv", [
    ["run", "--experiment", "mixing", "--system", "wiggly"],
    ["run", "--config", "/nonexistent/cfg.json"],
    ["run", "--experiment", "stable-cf", "--set", "bogus=1"],
])
def test_infrastructure_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(experiment="nope"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(experiment="mixing", colour="red"))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(experiment="mixing", overrides=dict(gamma=2)))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(experiment="mixing", seed=-1))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(dict(seed=1))


def test_seed_derivation():
    assert derive_seed(0, "mixing") != derive_seed(0, "moments")
    assert derive_seed(2**64 - 1, "x") < 2**64


def test_failing_criterion_exits_1(tmp_path):
    # a sampler fidelity threshold from 10 draws cannot be met at xi = 2
    code = main(["run", "--experiment", "stable-cf", "--out", str(tmp_path), "--set", "n=4",
                 "--set", "alphas=[1.5]", "--seed", "3"])
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert code == (0 if summary["status"] == "PASS" else 1)


def test_custom_experiment():
    cfg = ExperimentConfig("custom", system="toy-y", budgets=dict(n_paths=200, T=0.05))
    res = run_experiment(cfg)
    assert res.criteria == [] and res.passed
    assert all(r["anchor"] for r in res.rows)
