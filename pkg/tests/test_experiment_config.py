from __future__ import annotations

from pathlib import Path

import pytest

from flad_sim.core.experiment_config import (
    ConfigError,
    ExperimentConfig,
    GammaPolicy,
    TimingModel,
    effective_config,
    load_experiment_config,
)

ROOT = Path(__file__).resolve().parents[1]


def _write(path: Path, content: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")
    return path


def test_shipped_configs_validate() -> None:
    paths = sorted((ROOT / "configs").glob("*.toml"))
    assert len(paths) >= 5
    for path in paths:
        config = load_experiment_config(path)
        assert config.strategies


def test_defaults_follow_the_reference_setup() -> None:
    config = ExperimentConfig()
    assert config.scenario == "convergence"
    assert config.dataset.base_count == 40
    assert config.dataset.attacks_per_client == 1
    assert config.strategies[0].strategy == "flad"
    assert config.analysis.bins == 100


def test_load_applies_overrides_and_resolves_dataset_paths(tmp_path: Path) -> None:
    _write(tmp_path / "cfg" / "data" / "00_Syn.flnd", "placeholder")
    path = _write(
        tmp_path / "cfg" / "run.toml",
        'seed = 3\n[dataset]\ndataset_paths = ["data/00_Syn.flnd"]\n',
    )
    config = load_experiment_config(path, seed_override=99, output_override=tmp_path / "out")
    assert config.seed == 99
    assert config.output_dir == tmp_path / "out"
    assert config.dataset.dataset_paths == [tmp_path / "cfg" / "data" / "00_Syn.flnd"]
    assert config.dataset.uses_files
    assert effective_config(config)["seed"] == 99


def test_load_reports_missing_and_malformed_files(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="cannot read config"):
        load_experiment_config(tmp_path / "absent.toml")
    broken = _write(tmp_path / "broken.toml", "seed = = 1\n")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_experiment_config(broken)
    unknown = _write(tmp_path / "unknown.toml", "seeds = 1\n")
    with pytest.raises(ConfigError, match="invalid config"):
        load_experiment_config(unknown)
    missing = _write(tmp_path / "missing.toml", '[dataset]\ndataset_paths = ["nope.flnd"]\n')
    with pytest.raises(ConfigError, match="dataset file not found"):
        load_experiment_config(missing)


def test_convergence_needs_a_flad_strategy(tmp_path: Path) -> None:
    path = _write(
        tmp_path / "baseline_only.toml",
        '[[strategies]]\nstrategy = "fedavg"\n',
    )
    with pytest.raises(ConfigError, match="flad"):
        load_experiment_config(path)
    duplicate = _write(
        tmp_path / "dupes.toml",
        '[[strategies]]\nstrategy = "flad"\n[[strategies]]\nname = "flad"\nstrategy = "fedavg"\n',
    )
    with pytest.raises(ConfigError, match="unique"):
        load_experiment_config(duplicate)


def test_seed_override_must_fit_in_64_bits(tmp_path: Path) -> None:
    path = _write(tmp_path / "run.toml", "seed = 1\n")
    with pytest.raises(ConfigError, match="unsigned 64-bit"):
        load_experiment_config(path, seed_override=2**64)


def test_ordered_strategies_put_flad_first() -> None:
    config = ExperimentConfig.model_validate(
        {
            "scenario": "single-run",
            "strategies": [
                {"name": "avg", "strategy": "fedavg"},
                {"name": "adaptive", "strategy": "flad"},
            ],
        }
    )
    assert config.primary_strategy().name == "adaptive"
    assert [hp.name for hp in config.ordered_strategies()] == ["adaptive", "avg"]


def test_gamma_policy_takes_the_smallest_weight() -> None:
    policy = GammaPolicy(default=1.0, by_attack={"Syn": 0.9, "WebDDoS": 0.8})
    assert policy.gamma_for(()) == 1.0
    assert policy.gamma_for(("LDAP",)) == 1.0
    assert policy.gamma_for(("Syn", "LDAP")) == 0.9
    assert policy.gamma_for(("Syn", "WebDDoS")) == 0.8
    with pytest.raises(ValueError, match="gamma"):
        GammaPolicy(by_attack={"Syn": 1.5})


def test_timing_model_scales_with_training_size() -> None:
    timing = TimingModel.model_validate(
        {
            "seconds_per_sample": 1e-4,
            "network_seconds": 0.5,
            "clients": {"Syn": {"step_time": 0.2}},
        }
    )
    assert timing.step_time("LDAP", 100) == pytest.approx(0.01)
    assert timing.step_time("Syn", 100) == 0.2
    assert timing.network_time("Syn") == 0.5
