"""Process-wide logging for simulator runs.

Console output plus a size-bounded rotating file. Everything is driven by
`FLAD_SIM_LOG_*` environment variables; experiment TOML files never touch logging.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from logging.handlers import RotatingFileHandler
from pathlib import Path

ENV_PREFIX = "FLAD_SIM_LOG_"
DEFAULT_LOG_PATH = Path("work/logs/flad_sim.log")
ROUND_LOGGER = "flad_sim.core.federation"

_LINE_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
_CONFIGURED = False


def _env(suffix: str) -> str:
    return os.environ.get(ENV_PREFIX + suffix, "").strip()


def _level_from_env(suffix: str, default: int) -> int:
    level = logging.getLevelName(_env(suffix).upper() or logging.getLevelName(default))
    return level if isinstance(level, int) else default


def _bounded_int_from_env(suffix: str, default: int, low: int, high: int) -> int:
    try:
        value = int(_env(suffix))
    except ValueError:
        return default
    return min(high, max(low, value))


@dataclass(frozen=True)
class LogSettings:
    level: int = logging.INFO
    round_level: int = logging.INFO
    path: Path = DEFAULT_LOG_PATH
    max_bytes: int = 5 * 1024 * 1024
    backup_count: int = 10

    @classmethod
    def from_env(cls) -> LogSettings:
        """Read `FLAD_SIM_LOG_{LEVEL,ROUND_LEVEL,PATH,MAX_BYTES,BACKUP_COUNT}`."""
        level = _level_from_env("LEVEL", logging.INFO)
        return cls(
            level=level,
            # per-round federation lines are the bulk of a long sweep's log
            round_level=_level_from_env("ROUND_LEVEL", level),
            path=Path(_env("PATH") or DEFAULT_LOG_PATH),
            max_bytes=_bounded_int_from_env("MAX_BYTES", 5 * 1024 * 1024, 64 * 1024, 100 * 1024 * 1024),
            backup_count=_bounded_int_from_env("BACKUP_COUNT", 10, 1, 120),
        )


def _handlers(settings: LogSettings, *, quiet: bool) -> list[logging.Handler]:
    settings.path.parent.mkdir(parents=True, exist_ok=True)
    console = logging.StreamHandler()
    console.setLevel(max(settings.level, logging.WARNING) if quiet else settings.level)
    log_file = RotatingFileHandler(
        settings.path,
        maxBytes=settings.max_bytes,
        backupCount=settings.backup_count,
        encoding="utf-8",
    )
    log_file.setLevel(settings.level)
    formatter = logging.Formatter(_LINE_FORMAT, datefmt="%Y-%m-%dT%H:%M:%S%z")
    for handler in (console, log_file):
        handler.setFormatter(formatter)
    return [console, log_file]


def configure_runtime_logging(
    *, quiet: bool = False, force: bool = False, settings: LogSettings | None = None
) -> None:
    """Install the console and file handlers once per process.

    `quiet` keeps the console at WARNING and above; the file log is unaffected.
    `force` replaces handlers from an earlier call.
    """
    global _CONFIGURED
    if _CONFIGURED and not force:
        return
    resolved = settings if settings is not None else LogSettings.from_env()

    root = logging.getLogger()
    for stale in root.handlers:
        stale.close()
    root.handlers[:] = _handlers(resolved, quiet=quiet)
    root.setLevel(resolved.level)
    logging.getLogger(ROUND_LOGGER).setLevel(resolved.round_level)
    _CONFIGURED = True
