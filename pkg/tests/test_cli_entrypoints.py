from __future__ import annotations

import csv
import json
import runpy
from pathlib import Path

import pytest

from flad_sim.cli import app
from flad_sim.core.analysis import AnalysisError
from flad_sim.core.attack_specs import AttackLibraryError
from flad_sim.core.datagen import CapacityError
from flad_sim.core.dataset_format import DatasetFormatError
from flad_sim.core.experiment_config import ConfigError

_TINY = """
scenario = "{scenario}"
seed = 5
repetitions = {repetitions}

[dataset]
attacks = {attacks}
base_count = 20
max_per_class = 40

[[strategies]]
name = "flad"
strategy = "flad"
patience = 1
e_max = 2
s_max = 20
hidden_layers = 1
neurons_per_layer = 4
learning_rate = 0.05
max_rounds = 4

[[strategies]]
name = "fedavg-e1-b10"
strategy = "fedavg"
batch_size = 10
hidden_layers = 1
neurons_per_layer = 4
learning_rate = 0.05

[scalability]
sizes = {sizes}

[analysis]
bins = 8
features = ["packet_length", "time", "flow_length"]
"""


def _config(
    tmp_path: Path,
    *,
    scenario: str = "convergence",
    repetitions: int = 1,
    attacks: tuple[str, ...] = ("WebDDoS", "LDAP", "Syn"),
    sizes: tuple[int, ...] = (3, 4),
) -> Path:
    path = tmp_path / f"{scenario}.toml"
    path.write_text(
        _TINY.format(
            scenario=scenario,
            repetitions=repetitions,
            attacks=json.dumps(list(attacks)),
            sizes=json.dumps(list(sizes)),
        ),
        encoding="utf-8",
    )
    return path


@pytest.fixture(autouse=True)
def _no_log_files(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(app, "configure_runtime_logging", lambda **_: None)


def test_package_main_module_executes_cli_main(monkeypatch: pytest.MonkeyPatch) -> None:
    called = {"value": False}

    def fake_main() -> int:
        called["value"] = True
        return 0

    monkeypatch.setattr("flad_sim.cli.main", fake_main)
    with pytest.raises(SystemExit) as exit_info:
        runpy.run_module("flad_sim.cli.__main__", run_name="__main__")
    assert exit_info.value.code == 0
    assert called["value"] is True


def test_usage_errors_exit_with_config_code(capsys: pytest.CaptureFixture[str]) -> None:
    assert app.main([]) == app.EXIT_CONFIG
    assert app.main(["train", "--config", "x.toml", "--seed", "-1"]) == app.EXIT_CONFIG
    assert app.main(["train", "--config", "x.toml", "--seed", str(2**64)]) == app.EXIT_CONFIG
    assert "unsigned 64-bit" in capsys.readouterr().err


def test_args_from_namespace_normalizes_types() -> None:
    namespace = app.build_arg_parser().parse_args(
        ["scalability", "--config", "c.toml", "--out", "o", "--seed", "0x10", "--quiet"]
    )
    args = app._args_from_namespace(namespace)
    assert args == app.CliArgs(
        command="scalability",
        config_path=Path("c.toml"),
        output_dir=Path("o"),
        seed=16,
        quiet=True,
    )


def test_exit_code_mapping() -> None:
    assert app.exit_code_for(ConfigError("x")) == 2
    assert app.exit_code_for(AttackLibraryError("x")) == 2
    assert app.exit_code_for(CapacityError("x")) == 3
    assert app.exit_code_for(DatasetFormatError("x")) == 3
    assert app.exit_code_for(AnalysisError("x")) == 3
    assert app.exit_code_for(RuntimeError("x")) == 4


def test_missing_config_reports_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code = app.main(["train", "--config", str(tmp_path / "absent.toml")])
    assert code == app.EXIT_CONFIG
    assert "error: cannot read config" in capsys.readouterr().err


def test_unexpected_failures_exit_with_runtime_code(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    def boom(args: app.CliArgs) -> app.CommandOutcome:
        raise RuntimeError("worker crashed")

    monkeypatch.setattr(app, "run", boom)
    assert app.main(["train", "--config", str(_config(tmp_path))]) == app.EXIT_RUNTIME


def test_generate_writes_datasets_and_manifest(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    out = tmp_path / "generated"
    code = app.main(["generate", "--config", str(_config(tmp_path)), "--out", str(out)])
    assert code == app.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert [entry["attack_tag"] for entry in manifest["datasets"]] == ["WebDDoS", "LDAP", "Syn"]
    assert all((out / entry["file"]).is_file() for entry in manifest["datasets"])
    assert manifest["datasets"][0]["benign"] == manifest["datasets"][0]["ddos"] == 20
    assert json.loads((out / "effective_config.json").read_text(encoding="utf-8"))["seed"] == 5
    assert "generate: wrote 4 artifacts" in capsys.readouterr().out


def test_train_writes_round_streams_and_summary(tmp_path: Path) -> None:
    out = tmp_path / "train"
    code = app.main(["train", "--config", str(_config(tmp_path)), "--out", str(out), "--quiet"])
    assert code == app.EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert set(summary["strategies"]) == {"flad", "fedavg-e1-b10"}
    flad_rounds = (out / "rep_00" / "flad.rounds.jsonl").read_text(encoding="utf-8").splitlines()
    fedavg_rounds = (out / "rep_00" / "fedavg-e1-b10.rounds.jsonl").read_text(encoding="utf-8")
    assert len(flad_rounds) == len(fedavg_rounds.splitlines())
    first = json.loads(flad_rounds[0])
    assert list(first)[0] == "round"
    assert "wall_seconds" not in first
    with (out / "rep_00" / "flad.client_f1.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["round", "000_WebDDoS", "001_LDAP", "002_Syn"]
    assert len(rows) == len(flad_rounds) + 1
    assert (out / "timings.json").is_file()


def test_train_is_reproducible_across_invocations(tmp_path: Path) -> None:
    config = _config(tmp_path)
    for name in ("a", "b"):
        assert app.main(["train", "--config", str(config), "--out", str(tmp_path / name), "--quiet"]) == 0
    for stream in ("flad.rounds.jsonl", "fedavg-e1-b10.rounds.jsonl"):
        left = (tmp_path / "a" / "rep_00" / stream).read_bytes()
        right = (tmp_path / "b" / "rep_00" / stream).read_bytes()
        assert left == right
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_retrain_writes_stage_tables(tmp_path: Path) -> None:
    out = tmp_path / "retrain"
    config = _config(tmp_path, scenario="retraining")
    assert app.main(["retrain", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    stages = json.loads((out / "stages.json").read_text(encoding="utf-8"))
    assert [stage["stage"] for stage in stages] == [1, 2]
    assert stages[1]["start_digest"] == stages[0]["best_digest"]
    assert (out / "stages.csv").read_text(encoding="utf-8").startswith("repetition,stage,")


def test_retrain_with_two_attacks_is_a_config_error(tmp_path: Path) -> None:
    config = _config(tmp_path, scenario="retraining", attacks=("Syn", "LDAP"))
    assert app.main(["retrain", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


def test_scalability_rejects_oversized_federations_before_writing(tmp_path: Path) -> None:
    out = tmp_path / "sweep"
    config = _config(tmp_path, scenario="scalability", sizes=(3, 7))
    assert app.main(["scalability", "--config", str(config), "--out", str(out)]) == app.EXIT_DATA
    assert not out.exists()


def test_scalability_writes_size_table(tmp_path: Path) -> None:
    out = tmp_path / "sweep"
    config = _config(tmp_path, scenario="scalability", sizes=(2, 5))
    assert app.main(["scalability", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    with (out / "scalability.csv").open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["size"] for row in rows] == ["2", "5"]
    assert (out / "size_005" / "rep_00.rounds.jsonl").is_file()


def test_analyze_exports_matrix_and_histograms(tmp_path: Path) -> None:
    out = tmp_path / "analysis"
    config = _config(tmp_path, scenario="single-run")
    assert app.main(["analyze", "--config", str(config), "--out", str(out), "--quiet"]) == 0
    with (out / "jsd_matrix.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["attack_tag", "packet_length", "time", "flow_length"]
    assert [row[0] for row in rows[1:]] == ["WebDDoS", "LDAP", "Syn"]
    assert all(0.0 <= float(value) <= 1.0 for row in rows[1:] for value in row[1:])
    histogram_rows = (out / "histograms" / "time.csv").read_text(encoding="utf-8").splitlines()
    assert histogram_rows[0] == "attack_tag,bin_left,bin_right,density"
    assert len(histogram_rows) == 1 + 3 * 8
    meta = json.loads((out / "histograms_meta.json").read_text(encoding="utf-8"))
    assert meta["bins"] == 8
    assert meta["uniform_fallback"] == []


def test_generate_rejects_file_sources(tmp_path: Path) -> None:
    dataset = tmp_path / "00.flnd"
    dataset.write_bytes(b"")
    config = tmp_path / "files.toml"
    config.write_text(f'[dataset]\ndataset_paths = ["{dataset.as_posix()}"]\n', encoding="utf-8")
    assert app.main(["generate", "--config", str(config), "--out", str(tmp_path / "o")]) == 2
