from __future__ import annotations

import importlib.util
from pathlib import Path
from types import ModuleType

ROOT = Path(__file__).resolve().parents[1]


def _load_checker_module() -> ModuleType:
    module_path = ROOT / "tools" / "check_imports.py"
    spec = importlib.util.spec_from_file_location("check_imports_tool", module_path)
    assert spec is not None
    loader = spec.loader
    assert loader is not None
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def _write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def test_check_file_allows_core_internal_import(tmp_path: Path) -> None:
    checker = _load_checker_module()
    source_root = tmp_path / "src" / "flad_sim"
    core_file = source_root / "core" / "federation.py"
    _write(core_file, "from flad_sim.core import seeding\nfrom .nn_core import forward\n")
    assert checker.check_file(core_file, source_root) == []


def test_check_file_rejects_core_importing_adapters(tmp_path: Path) -> None:
    checker = _load_checker_module()
    source_root = tmp_path / "src" / "flad_sim"
    core_file = source_root / "core" / "federation.py"
    _write(core_file, "from flad_sim.adapters import report_writer\n")
    violations = checker.check_file(core_file, source_root)
    assert len(violations) == 1
    assert "core must not import flad_sim.adapters" in violations[0]


def test_check_file_resolves_relative_imports(tmp_path: Path) -> None:
    checker = _load_checker_module()
    source_root = tmp_path / "src" / "flad_sim"
    adapter_file = source_root / "adapters" / "report_writer.py"
    _write(adapter_file, "from ..application import experiment_runs\nfrom .. import cli\n")
    violations = checker.check_file(adapter_file, source_root)
    assert len(violations) == 2
    assert any("adapters must not import flad_sim.application" in item for item in violations)
    assert any("adapters must not import flad_sim.cli" in item for item in violations)


def test_cli_layer_may_import_everything(tmp_path: Path) -> None:
    checker = _load_checker_module()
    source_root = tmp_path / "src" / "flad_sim"
    cli_file = source_root / "cli" / "app.py"
    _write(cli_file, "from flad_sim.application import experiment_runs\nimport flad_sim.adapters\n")
    assert checker.check_file(cli_file, source_root) == []


def test_repository_sources_respect_layer_boundaries() -> None:
    checker = _load_checker_module()
    assert checker.check_import_boundaries() == []
