from __future__ import annotations

import json
from pathlib import Path

import pytest

from flad_sim.adapters.report_writer import (
    JsonlReportWriter,
    format_cell,
    write_csv_atomic,
    write_json_atomic,
)


def test_write_json_atomic_leaves_no_temp_file(tmp_path: Path) -> None:
    target = tmp_path / "nested" / "summary.json"
    write_json_atomic(target, {"best_f1": 0.75, "attack": "WebDDoS"})
    assert json.loads(target.read_text(encoding="utf-8")) == {"best_f1": 0.75, "attack": "WebDDoS"}
    assert target.read_text(encoding="utf-8").endswith("\n")
    assert sorted(path.name for path in target.parent.iterdir()) == ["summary.json"]


def test_format_cell_keeps_float_precision() -> None:
    assert format_cell(0.1 + 0.2) == "0.30000000000000004"
    assert format_cell(True) == "true"
    assert format_cell(7) == "7"


def test_write_csv_atomic_checks_row_width(tmp_path: Path) -> None:
    target = tmp_path / "stages.csv"
    write_csv_atomic(target, ["stage", "mean_f1"], [[1, 0.5], [2, 0.875]])
    assert target.read_text(encoding="utf-8") == "stage,mean_f1\n1,0.5\n2,0.875\n"
    with pytest.raises(ValueError, match="2 cells, header has 3"):
        write_csv_atomic(target, ["a", "b", "c"], [[1, 2]])


def test_jsonl_writer_publishes_on_close(tmp_path: Path) -> None:
    target = tmp_path / "rep_00" / "flad.rounds.jsonl"
    with JsonlReportWriter(target) as writer:
        writer.write({"round": 1, "mean_accuracy": 0.5})
        writer.write({"round": 2, "mean_accuracy": 0.6})
        assert not target.exists()
        assert (tmp_path / "rep_00" / "flad.rounds.jsonl.partial").exists()
    lines = target.read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["round"] for line in lines] == [1, 2]
    assert writer.lines_written == 2
    assert not (tmp_path / "rep_00" / "flad.rounds.jsonl.partial").exists()


def test_jsonl_writer_keeps_rows_written_before_a_failure(tmp_path: Path) -> None:
    target = tmp_path / "size_013" / "rep_00.rounds.jsonl"
    with pytest.raises(RuntimeError):
        with JsonlReportWriter(target) as writer:
            writer.write({"round": 1})
            raise RuntimeError("diverged")
    assert target.read_text(encoding="utf-8") == '{"round":1}\n'
