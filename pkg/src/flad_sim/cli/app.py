"""Command-line entrypoint: `flad-sim {generate,train,retrain,scalability,analyze}`."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

from flad_sim.adapters.observability import configure_runtime_logging
from flad_sim.application.experiment_runs import (
    CommandOutcome,
    cmd_analyze,
    cmd_generate,
    cmd_retrain,
    cmd_scalability,
    cmd_train,
)
from flad_sim.core.analysis import AnalysisError
from flad_sim.core.attack_specs import AttackLibraryError
from flad_sim.core.datagen import DatagenError
from flad_sim.core.dataset_format import DatasetFormatError
from flad_sim.core.experiment_config import (
    ConfigError,
    ExperimentConfig,
    load_experiment_config,
)
from flad_sim.core.model_codec import ModelCodecError
from flad_sim.core.seeding import U64_MAX

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

_COMMANDS: dict[str, tuple[Callable[[ExperimentConfig], CommandOutcome], str]] = {
    "generate": (cmd_generate, "Generate synthetic non-IID client datasets as FLND files."),
    "train": (cmd_train, "Compare federation strategies on one federation."),
    "retrain": (cmd_retrain, "Grow the federation one attack at a time from the last model."),
    "scalability": (cmd_scalability, "Sweep federation sizes and record F1 and convergence time."),
    "analyze": (cmd_analyze, "Export the JSD matrix and per-feature histograms."),
}


@dataclass(frozen=True)
class CliArgs:
    command: str
    config_path: Path
    output_dir: Path | None
    seed: int | None
    quiet: bool


def _u64(raw: str) -> int:
    try:
        value = int(raw, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {raw!r}") from None
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {raw}")
    return value


def build_arg_parser() -> argparse.ArgumentParser:
    """Define the subcommands and their shared flags."""
    parser = argparse.ArgumentParser(
        prog="flad-sim",
        description="Deterministic federated DDoS-detection simulator.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        sub.add_argument("--config", required=True, help="Experiment TOML file.")
        sub.add_argument("--out", default=None, help="Output directory (overrides the config).")
        sub.add_argument("--seed", type=_u64, default=None, help="Root seed (overrides the config).")
        sub.add_argument("--quiet", action="store_true", help="Only warnings on the console.")
    return parser


def _args_from_namespace(namespace: argparse.Namespace) -> CliArgs:
    """Normalize argparse namespace values into typed runtime args."""
    return CliArgs(
        command=str(namespace.command),
        config_path=Path(str(namespace.config)),
        output_dir=Path(str(namespace.out)) if namespace.out is not None else None,
        seed=int(namespace.seed) if namespace.seed is not None else None,
        quiet=bool(namespace.quiet),
    )


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, AttackLibraryError)):
        return EXIT_CONFIG
    if isinstance(exc, (DatagenError, DatasetFormatError, ModelCodecError, AnalysisError)):
        return EXIT_DATA
    return EXIT_RUNTIME


def run(args: CliArgs) -> CommandOutcome:
    config = load_experiment_config(
        args.config_path, seed_override=args.seed, output_override=args.output_dir
    )
    command, _ = _COMMANDS[args.command]
    logger.info(
        "cli.start command=%s scenario=%s seed=%d out=%s",
        args.command,
        config.scenario,
        config.seed,
        config.output_dir,
    )
    return command(config)


def main(argv: list[str] | None = None) -> int:
    """CLI entrypoint; returns the process exit code."""
    parser = build_arg_parser()
    try:
        namespace = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    args = _args_from_namespace(namespace)
    configure_runtime_logging(quiet=args.quiet)
    try:
        outcome = run(args)
    except Exception as exc:  # noqa: BLE001
        code = exit_code_for(exc)
        logger.error("cli.failed command=%s exit=%d error=%s", args.command, code, exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    if not args.quiet:
        print(f"{args.command}: wrote {len(outcome.artifacts)} artifacts to {outcome.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
