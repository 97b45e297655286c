"""Console and JSON-file logging for the library and the CLI."""
import logging
import os
from typing import Optional

import coloredlogs
from pythonjsonlogger import jsonlogger

from core.errors import ConfigError

LOG_ENV_VAR = "PROCAL_LOG"
LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
CONSOLE_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
JSON_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def resolve_level(level: Optional[str] = None) -> int:
    """
    Map a PROCAL_LOG value to a logging level.

    Raises:
        ConfigError: For values other than quiet, info and debug.
    """
    name = (level if level is not None else os.environ.get(LOG_ENV_VAR, "info")).strip().lower()
    if name not in LEVELS:
        raise ConfigError(f"{LOG_ENV_VAR} must be one of {sorted(LEVELS)}, got '{name}'")
    return LEVELS[name]


def is_quiet() -> bool:
    return logging.getLogger().getEffectiveLevel() >= logging.WARNING


def configure_logging(level: Optional[str] = None) -> int:
    """Install coloredlogs on the root logger and return the active level."""
    numeric = resolve_level(level)
    coloredlogs.install(level=numeric, fmt=CONSOLE_FORMAT)
    return numeric


def attach_json_log(out_dir: str, filename: str = "run.log.jsonl") -> logging.Handler:
    """Add a JSON-lines file handler writing into `out_dir`."""
    os.makedirs(out_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(out_dir, filename), mode="w", encoding="utf-8")
    handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    root = logging.getLogger()
    handler.setLevel(root.getEffectiveLevel())
    root.addHandler(handler)
    return handler
