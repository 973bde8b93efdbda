"""Command orchestration: run experiment protocols and publish their artifacts."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import partial
from hashlib import sha256
from pathlib import Path
from types import TracebackType
from typing import Any

from flad_sim.adapters.report_writer import (
    JsonlReportWriter,
    write_bytes_atomic,
    write_csv_atomic,
    write_json_atomic,
)
from flad_sim.core.dataset_format import encode_dataset
from flad_sim.core.experiment_config import ConfigError, ExperimentConfig, effective_config
from flad_sim.core.experiments import (
    SizeRun,
    StrategyRun,
    check_scalability_sizes,
    load_federation_data,
    run_analysis,
    run_retraining,
    run_scalability,
    run_strategies,
    summarize_sizes,
    summarize_strategies,
)
from flad_sim.core.federation import RoundReport

logger = logging.getLogger(__name__)

STAGE_COLUMNS = (
    "repetition",
    "stage",
    "attacks_added",
    "clients",
    "rounds",
    "best_round",
    "mean_f1",
    "f1_std",
    "start_digest",
    "best_digest",
    "simulated_seconds",
)
SCALABILITY_COLUMNS = (
    "size",
    "repetitions",
    "f1_mean",
    "f1_std",
    "convergence_seconds_mean",
    "convergence_seconds_std",
    "rounds_mean",
    "rounds_std",
)


@dataclass(frozen=True)
class CommandOutcome:
    output_dir: Path
    artifacts: tuple[Path, ...] = field(default_factory=tuple)


class _ReportStreams:
    """Open JSONL writers keyed by stream name; all of them are published on exit."""

    def __init__(self, path_for: Callable[[str], Path]) -> None:
        self._path_for = path_for
        self._writers: dict[str, JsonlReportWriter] = {}

    def __enter__(self) -> _ReportStreams:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        for writer in self._writers.values():
            writer.close()

    def write(self, name: str, report: RoundReport) -> None:
        writer = self._writers.get(name)
        if writer is None:
            writer = JsonlReportWriter(self._path_for(name))
            writer.open()
            self._writers[name] = writer
        writer.write(report.to_record())

    @property
    def paths(self) -> list[Path]:
        return [writer.path for writer in self._writers.values()]


def _prepare_output(config: ExperimentConfig) -> Path:
    output_dir = config.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    write_json_atomic(output_dir / "effective_config.json", effective_config(config))
    return output_dir


def _rounds_path(directory: Path, name: str) -> Path:
    return directory / f"{name}.rounds.jsonl"


def _fixed_path(path: Path, _name: str) -> Path:
    return path


def _rep_dir(output_dir: Path, repetition: int) -> Path:
    return output_dir / f"rep_{repetition:02d}"


def cmd_generate(config: ExperimentConfig) -> CommandOutcome:
    """Write one FLND file per client dataset plus a manifest of their digests."""
    if config.dataset.uses_files:
        raise ConfigError("generate needs a library dataset source, not dataset_paths")
    output_dir = _prepare_output(config)
    data = load_federation_data(config)
    entries: list[dict[str, Any]] = []
    artifacts: list[Path] = []
    for index, split in enumerate(data.client_splits):
        record = encode_dataset(split)
        relative = Path("datasets") / f"{index:02d}_{split.attack_tag}.flnd"
        write_bytes_atomic(output_dir / relative, record)
        artifacts.append(output_dir / relative)
        counts = split.class_counts
        entries.append(
            {
                "file": relative.as_posix(),
                "attack_tag": split.attack_tag,
                "sha256": sha256(record).hexdigest(),
                "samples": len(split),
                "train": len(split.train),
                "validation": len(split.validation),
                "test": len(split.test),
                "benign": counts[0],
                "ddos": counts[1],
            }
        )
    manifest = {
        "library_digest": data.library_digest,
        "seed": config.seed,
        "base_count": config.dataset.base_count,
        "max_per_class": config.dataset.max_per_class,
        "attacks_per_client": config.dataset.attacks_per_client,
        "attacks": list(data.attack_tags),
        "datasets": entries,
    }
    write_json_atomic(output_dir / "manifest.json", manifest)
    logger.info("generate.done datasets=%d out=%s", len(entries), output_dir)
    return CommandOutcome(output_dir=output_dir, artifacts=(*artifacts, output_dir / "manifest.json"))


def _client_f1_rows(run: StrategyRun) -> tuple[list[str], list[list[object]]]:
    client_ids = [record.client_id for record in run.result.reports[0].clients]
    header = ["round", *client_ids]
    rows: list[list[object]] = [
        [report.round_index, *(report.accuracies()[cid] for cid in client_ids)]
        for report in run.result.reports
    ]
    return header, rows


def cmd_train(config: ExperimentConfig) -> CommandOutcome:
    """Strategy comparison over `repetitions` derived seeds, with per-round report streams."""
    output_dir = _prepare_output(config)
    data = load_federation_data(config)
    all_runs: list[StrategyRun] = []
    timings: list[dict[str, Any]] = []
    artifacts: list[Path] = []
    started = time.perf_counter()
    for repetition in range(config.repetitions):
        rep_dir = _rep_dir(output_dir, repetition)
        with _ReportStreams(partial(_rounds_path, rep_dir)) as streams:
            runs = run_strategies(data, config, repetition, sink=streams.write)
        artifacts.extend(streams.paths)
        for run in runs:
            header, rows = _client_f1_rows(run)
            csv_path = rep_dir / f"{run.strategy}.client_f1.csv"
            write_csv_atomic(csv_path, header, rows)
            artifacts.append(csv_path)
        all_runs.extend(runs)
        timings.append(
            {
                "repetition": repetition,
                "wall_seconds": {run.strategy: run.result.wall_seconds for run in runs},
            }
        )
    summary = {
        "scenario": config.scenario,
        "seed": config.seed,
        "repetitions": config.repetitions,
        "strategies": summarize_strategies(all_runs),
        "runs": [
            {"strategy": run.strategy, "repetition": run.repetition, **run.summary()}
            for run in all_runs
        ],
    }
    write_json_atomic(output_dir / "summary.json", summary)
    write_json_atomic(
        output_dir / "timings.json",
        {"total_wall_seconds": time.perf_counter() - started, "repetitions": timings},
    )
    logger.info("train.done runs=%d out=%s", len(all_runs), output_dir)
    return CommandOutcome(
        output_dir=output_dir,
        artifacts=(*artifacts, output_dir / "summary.json", output_dir / "timings.json"),
    )


def cmd_retrain(config: ExperimentConfig) -> CommandOutcome:
    """Staged retraining, one attack added per stage, repeated with fresh attack orders."""
    output_dir = _prepare_output(config)
    data = load_federation_data(config)
    records: list[dict[str, Any]] = []
    timings: list[dict[str, Any]] = []
    started = time.perf_counter()
    for repetition in range(config.repetitions):
        rep_started = time.perf_counter()
        rep_dir = _rep_dir(output_dir, repetition)
        with _ReportStreams(partial(_rounds_path, rep_dir)) as streams:
            stages = run_retraining(data, config, repetition, sink=streams.write)
        records.extend(stage.to_record() for stage in stages)
        timings.append(
            {"repetition": repetition, "wall_seconds": time.perf_counter() - rep_started}
        )
    write_json_atomic(output_dir / "stages.json", records)
    write_csv_atomic(
        output_dir / "stages.csv",
        STAGE_COLUMNS,
        [
            [
                record["repetition"],
                record["stage"],
                "+".join(record["attacks_added"]),
                len(record["clients"]),
                record["rounds"],
                record["best_round"],
                record["mean_f1"],
                record["f1_std"],
                record["start_digest"],
                record["best_digest"],
                record["simulated_seconds"],
            ]
            for record in records
        ],
    )
    write_json_atomic(
        output_dir / "timings.json",
        {"total_wall_seconds": time.perf_counter() - started, "repetitions": timings},
    )
    logger.info("retrain.done stages=%d out=%s", len(records), output_dir)
    return CommandOutcome(
        output_dir=output_dir,
        artifacts=(output_dir / "stages.json", output_dir / "stages.csv"),
    )


def cmd_scalability(config: ExperimentConfig) -> CommandOutcome:
    """Federation-size sweep: F1 and simulated convergence time per size."""
    data = load_federation_data(config)
    check_scalability_sizes(config, len(data.attack_splits))
    output_dir = _prepare_output(config)
    runs: list[SizeRun] = []
    timings: list[dict[str, Any]] = []
    started = time.perf_counter()
    for size in config.scalability.sizes:
        for repetition in range(config.repetitions):
            run_started = time.perf_counter()
            rounds_path = output_dir / f"size_{size:03d}" / f"rep_{repetition:02d}.rounds.jsonl"
            with _ReportStreams(partial(_fixed_path, rounds_path)) as streams:
                runs.append(run_scalability(data, config, size, repetition, sink=streams.write))
            timings.append(
                {
                    "size": size,
                    "repetition": repetition,
                    "wall_seconds": time.perf_counter() - run_started,
                }
            )
    rows = summarize_sizes(runs)
    write_csv_atomic(
        output_dir / "scalability.csv",
        SCALABILITY_COLUMNS,
        [[row[column] for column in SCALABILITY_COLUMNS] for row in rows],
    )
    write_json_atomic(
        output_dir / "scalability.json",
        {
            "sizes": rows,
            "runs": [
                {
                    "size": run.size,
                    "repetition": run.repetition,
                    "f1": run.f1,
                    "f1_std": run.f1_std,
                    "rounds": run.rounds,
                    "convergence_seconds": run.convergence_seconds,
                }
                for run in runs
            ],
        },
    )
    write_json_atomic(
        output_dir / "timings.json",
        {"total_wall_seconds": time.perf_counter() - started, "runs": timings},
    )
    logger.info("scalability.done sizes=%d out=%s", len(rows), output_dir)
    return CommandOutcome(
        output_dir=output_dir,
        artifacts=(output_dir / "scalability.csv", output_dir / "scalability.json"),
    )


def cmd_analyze(config: ExperimentConfig) -> CommandOutcome:
    """JSD matrix and per-feature histograms over the configured datasets."""
    output_dir = _prepare_output(config)
    data = load_federation_data(config)
    outcome = run_analysis(data.attack_splits, config)
    matrix = outcome.matrix
    write_csv_atomic(
        output_dir / "jsd_matrix.csv",
        ["attack_tag", *matrix.features],
        [
            [tag, *(float(value) for value in matrix.values[row])]
            for row, tag in enumerate(matrix.attack_tags)
        ],
    )
    artifacts = [output_dir / "jsd_matrix.csv"]
    fallbacks: list[dict[str, str]] = []
    for feature, histograms in outcome.histograms.items():
        rows: list[list[object]] = []
        for tag, feature_histogram in zip(matrix.attack_tags, histograms, strict=True):
            if feature_histogram.uniform_fallback:
                fallbacks.append({"feature": feature, "attack_tag": tag})
            rows.extend([tag, left, right, density] for left, right, density in feature_histogram.rows())
        path = output_dir / "histograms" / f"{feature}.csv"
        write_csv_atomic(path, ("attack_tag", "bin_left", "bin_right", "density"), rows)
        artifacts.append(path)
    write_json_atomic(
        output_dir / "histograms_meta.json",
        {
            "bins": config.analysis.bins,
            "features": list(matrix.features),
            "attack_tags": list(matrix.attack_tags),
            "ranges": {feature: list(bounds) for feature, bounds in outcome.ranges.items()},
            "uniform_fallback": fallbacks,
        },
    )
    logger.info("analyze.done datasets=%d features=%d out=%s", len(matrix.attack_tags), len(matrix.features), output_dir)
    return CommandOutcome(output_dir=output_dir, artifacts=(*artifacts, output_dir / "histograms_meta.json"))
