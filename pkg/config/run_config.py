"""Run configuration: defaults, then a JSON config file, then CLI flags"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from relgraph.errors import ConfigError

from .settings import DEFAULT_DATASET, DEFAULT_MODEL, DEFAULT_TRAIN, FAR_LEVELS
from .validation import check_config_keys

logger = logging.getLogger(__name__)

ECHO_FILE = "resolved_config.json"


class RunConfig:
    """Fully resolved settings for one command invocation"""

    def __init__(self, values: Dict[str, Any]):
        self.values = dict(values)

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.values)

    def echo(self, out_dir: Path) -> Path:
        """Write the resolved config next to the outputs it produced"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / ECHO_FILE
        path.write_text(json.dumps(self.values, indent=2, sort_keys=True) + "\n")
        return path


def default_values() -> Dict[str, Any]:
    """Merged model and training defaults plus protocol settings"""
    values: Dict[str, Any] = {}
    values.update(DEFAULT_MODEL)
    values.update(DEFAULT_TRAIN)
    values["far_levels"] = list(FAR_LEVELS)
    values["gen"] = dict(DEFAULT_DATASET)
    return values


def _merge(values: Dict[str, Any], layer: Dict[str, Any]) -> None:
    """Apply one config layer; the nested "gen" object merges key by key"""
    for key, value in layer.items():
        if key == "gen":
            values["gen"] = dict(values.get("gen") or {}, **value)
        else:
            values[key] = value


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Resolve a run config

    Args:
        path: Optional JSON config file
        overrides: Flag values; None entries mean "not given"

    Returns:
        RunConfig with every key resolved
    """
    values = default_values()

    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {path}: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")

        ok, msg = check_config_keys(raw)
        if not ok:
            raise ConfigError(msg)
        _merge(values, raw)
        logger.info(f"Loaded config file: {path}")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        ok, msg = check_config_keys({key: value})
        if not ok:
            raise ConfigError(msg)
        _merge(values, {key: value})

    return RunConfig(values)
