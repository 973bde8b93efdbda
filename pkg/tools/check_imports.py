"""Validate Python layer import boundaries for flad_sim."""

from __future__ import annotations

import ast
from pathlib import Path

PACKAGE = "flad_sim"
PROJECT_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_SOURCE_ROOT = PROJECT_ROOT / "src" / PACKAGE
KNOWN_LAYERS = {"core", "adapters", "application", "cli"}
RULES: dict[str, set[str]] = {
    "core": {"adapters", "application", "cli"},
    "adapters": {"application", "cli"},
    "application": {"cli"},
}


def _layer_for_path(path: Path, source_root: Path) -> str | None:
    """Return the top-level layer of a source file, or None outside a layer package."""
    try:
        relative = path.relative_to(source_root)
    except ValueError:
        return None
    if len(relative.parts) < 2:
        return None
    return relative.parts[0]


def _layer_from_module(module_name: str) -> str | None:
    parts = module_name.split(".")
    if len(parts) < 2 or parts[0] != PACKAGE:
        return None
    return parts[1] if parts[1] in KNOWN_LAYERS else None


def _absolute_module(node: ast.ImportFrom, path: Path, source_root: Path) -> str | None:
    if node.level == 0:
        return node.module
    package_parts = [PACKAGE, *path.relative_to(source_root).with_suffix("").parts][:-1]
    if node.level - 1 > len(package_parts) - 1:
        return None
    base = package_parts[: len(package_parts) - (node.level - 1)]
    return ".".join([*base, *(node.module.split(".") if node.module else [])])


def _imported_layers(node: ast.Import | ast.ImportFrom, path: Path, source_root: Path) -> set[str]:
    """All flad_sim layers one import statement reaches."""
    if isinstance(node, ast.Import):
        return {layer for alias in node.names if (layer := _layer_from_module(alias.name))}
    module = _absolute_module(node, path, source_root)
    if module is None:
        return set()
    direct = _layer_from_module(module)
    if direct is not None:
        return {direct}
    if module == PACKAGE:
        return {alias.name for alias in node.names if alias.name in KNOWN_LAYERS}
    return set()


def check_file(path: Path, source_root: Path = DEFAULT_SOURCE_ROOT) -> list[str]:
    """Collect boundary violations for a single Python file."""
    layer = _layer_for_path(path, source_root)
    banned = RULES.get(layer, set()) if layer is not None else set()
    if not banned:
        return []
    tree = ast.parse(path.read_text(encoding="utf-8"), filename=str(path))
    violations: list[str] = []
    for node in ast.walk(tree):
        if not isinstance(node, (ast.Import, ast.ImportFrom)):
            continue
        for imported in sorted(_imported_layers(node, path, source_root) & banned):
            violations.append(f"{path}: {layer} must not import {PACKAGE}.{imported}")
    return violations


def check_import_boundaries(source_root: Path = DEFAULT_SOURCE_ROOT) -> list[str]:
    """Scan all package files and return any boundary violations."""
    violations: list[str] = []
    for path in sorted(source_root.rglob("*.py")):
        violations.extend(check_file(path, source_root))
    return violations


def main() -> None:
    """CLI entrypoint for architecture boundary checks."""
    violations = check_import_boundaries()
    if violations:
        raise SystemExit("\n".join(violations))
    print("import boundary checks passed")


if __name__ == "__main__":
    main()
