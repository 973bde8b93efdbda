from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from flad_sim.core.experiment_config import ExperimentConfig, load_experiment_config
from flad_sim.core.experiments import (
    load_federation_data,
    run_analysis,
    run_retraining,
    run_strategies,
)

ROOT = Path(__file__).resolve().parents[1]

pytestmark = pytest.mark.slow


def _shipped(name: str) -> ExperimentConfig:
    return load_experiment_config(ROOT / "configs" / name)


def test_smoke_configuration_end_to_end() -> None:
    config = _shipped("smoke.toml")
    data = load_federation_data(config)
    flad, fedavg = run_strategies(data, config, 0)
    hp = config.primary_strategy()

    result = flad.result
    if not result.truncated:
        assert result.rounds - result.best_round == hp.patience + 1
    assert fedavg.result.rounds == result.rounds
    assert result.best_accuracy > 0.5
    for report in result.reports[1:]:
        for record in report.clients:
            if record.selected:
                assert (hp.e_min, hp.s_min) <= (record.epochs, record.steps) <= (hp.e_max, hp.s_max)

    outcome = run_analysis(data.attack_splits, config)
    assert np.all(outcome.matrix.values >= 0.0)
    assert np.all(outcome.matrix.values <= 1.0)


def test_flad_outperforms_fedavg_on_unbalanced_single_attack_clients() -> None:
    config = _shipped("convergence.toml")
    compared = {"flad", "fedavg-e1-b50"}
    config = config.model_copy(
        update={"strategies": [hp for hp in config.strategies if hp.name in compared]}
    )
    data = load_federation_data(config)
    assert len(data.client_splits) == 13

    flad_f1, flad_std, flad_steps = [], [], []
    fedavg_f1, fedavg_steps = [], []
    for repetition in range(config.repetitions):
        flad, fedavg = run_strategies(data, config, repetition)
        assert (flad.strategy, fedavg.strategy) == ("flad", "fedavg-e1-b50")
        assert flad.result.rounds <= 100
        assert fedavg.result.rounds == flad.result.rounds
        flad_summary = flad.summary()
        flad_f1.append(flad_summary["best_f1"])
        flad_std.append(flad_summary["f1_std"])
        flad_steps.append(flad_summary["mbgd_steps"])
        fedavg_summary = fedavg.summary()
        fedavg_f1.append(fedavg_summary["best_f1"])
        fedavg_steps.append(fedavg_summary["mbgd_steps"])

    assert config.repetitions == 3
    assert np.mean(flad_f1) >= 0.95
    assert np.mean(flad_std) <= 0.08
    lower_f1 = np.mean(fedavg_f1) <= np.mean(flad_f1) - 0.02
    costlier = np.mean(fedavg_steps) >= 2 * np.mean(flad_steps)
    assert lower_f1 or costlier


def test_retraining_keeps_every_stage_accurate_and_balanced() -> None:
    config = _shipped("retraining.toml")
    data = load_federation_data(config)
    attack_count = len(data.attack_splits)
    for repetition in range(config.repetitions):
        stages = run_retraining(data, config, repetition)
        assert len(stages) == attack_count - config.retraining.initial_clients + 1
        assert len(stages[-1].clients) == attack_count
        for stage in stages:
            assert stage.mean_f1 >= 0.93, stage.to_record()
            assert stage.f1_std <= 0.08, stage.to_record()
