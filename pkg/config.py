"""
config.py
Centralized configuration management for densea.
Handles runtime paths, log level, environment overrides and the strict
dataclass loader used by every experiment config block.
"""

import os
import json
import logging
import functools
from typing import Any

from pydantic import ConfigDict, TypeAdapter, ValidationError

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration. `path` is the dotted field path when known."""

    def __init__(self, message: str, path: str | None = None):
        self.message = message
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)

    def under(self, prefix: str) -> "ConfigError":
        """Return a copy of this error re-rooted below `prefix`."""
        path = f"{prefix}.{self.path}" if self.path else prefix
        return ConfigError(self.message, path)


class AppConfig:
    def __init__(self):
        # ------------------------------------------------------------------
        # 1. Static Paths & Constants
        # ------------------------------------------------------------------
        self.app_root = os.path.abspath(os.path.dirname(__file__))
        self.runs_dir = os.path.join(self.app_root, "runs")
        self.config_path = os.path.join(self.app_root, "densea.json")
        self.log_name = "densea.log"
        self.schema_version = SCHEMA_VERSION

        # ------------------------------------------------------------------
        # 2. Dynamic Settings (Loaded from JSON/Env)
        # ------------------------------------------------------------------
        self.log_level = "INFO"  # NONE, WARNING, INFO, DEBUG
        self.default_experiment = ""

        self.load()

        # Env Var > Config File > Default
        self.runs_dir = os.environ.get("DENSEA_RUNS", self.runs_dir)
        self.log_level = os.environ.get("DENSEA_LOG", self.log_level).upper()

    def load(self):
        """Load settings from densea.json if it exists."""
        try:
            if os.path.exists(self.config_path):
                with open(self.config_path, "r", encoding="utf-8") as f:
                    data = json.load(f)
                    self.runs_dir = data.get("runs_dir", self.runs_dir)
                    self.log_level = str(data.get("log_level", "INFO")).upper()
                    self.default_experiment = data.get("default_experiment", "")
        except Exception as e:
            logging.error(f"Failed to load config: {e}")

    def save(self):
        """Persist current settings to densea.json."""
        data = {
            "runs_dir": self.runs_dir,
            "log_level": self.log_level,
            "default_experiment": self.default_experiment,
        }
        try:
            with open(self.config_path, "w", encoding="utf-8") as f:
                json.dump(data, f, indent=2)
        except Exception as e:
            logging.error(f"Failed to save config: {e}")


# ------------------------------------------------------------
# Strict dataclass loading
# ------------------------------------------------------------

# Every experiment block is a stdlib dataclass decorated with this config.
CONFIG_BLOCK = ConfigDict(extra="forbid")


@functools.lru_cache(maxsize=None)
def _adapter(cls) -> TypeAdapter:
    return TypeAdapter(cls)


def _loc_path(loc: tuple) -> str:
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path = f"{path}.{part}" if path else str(part)
    return path


def _as_config_error(err: dict) -> ConfigError:
    path = _loc_path(err["loc"])
    cause = (err.get("ctx") or {}).get("error")
    if isinstance(cause, ConfigError):
        return cause.under(path) if path else cause
    if err["type"] == "extra_forbidden":
        return ConfigError("unknown key", path or None)
    return ConfigError(err["msg"], path or None)


def from_dict(cls, data: Any):
    """
    Build dataclass `cls` from a JSON object.
    Unknown keys, wrong types and __post_init__ range checks all surface as
    ConfigError carrying the dotted field path.
    """
    try:
        return _adapter(cls).validate_json(json.dumps(data), strict=True)
    except ValidationError as e:
        raise _as_config_error(e.errors()[0]) from None


def to_dict(obj) -> dict[str, Any]:
    """Inverse of from_dict for JSON snapshots (tuples become lists)."""
    return _adapter(type(obj)).dump_python(obj, mode="json")


# Global Singleton instance
# Modules should import this: `from config import config`
config = AppConfig()
