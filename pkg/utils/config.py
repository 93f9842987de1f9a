"""JSON run configuration: defaults < config file < explicit flags."""
import dataclasses
import json
import logging
from typing import Any, Dict, Optional

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
GLOBAL_KEYS = ('seed', 'threads', 'output')


@dataclasses.dataclass
class RunConfig:
    command: str
    params: Dict[str, Any]
    seed: Optional[int] = None
    threads: int = 1
    output: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return {
            'schema_version': self.schema_version,
            'command': self.command,
            'seed': self.seed,
            'threads': self.threads,
            'output': self.output,
            'params': self.params,
        }


def _normalize_keys(section: Dict[str, Any]) -> Dict[str, Any]:
    return {key.replace('-', '_'): value for key, value in section.items()}


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Failed to load config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise ConfigurationError(
            f"config {path} has schema_version {version!r}; expected {SCHEMA_VERSION}"
        )
    logger.debug("loaded config %s", path)
    return data


def resolve(command: str, defaults: Dict[str, Any], file_config: Dict[str, Any],
            flags: Dict[str, Any]) -> RunConfig:
    """Merge the three layers; flags left at None do not override anything."""
    section = _normalize_keys(file_config.get(command, {}))
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigurationError(f"unknown keys for '{command}' in config: {sorted(unknown)}")
    params = dict(defaults)
    params.update(section)
    params.update({k: v for k, v in flags.items() if k in defaults and v is not None})

    def pick(key, fallback):
        value = flags.get(key)
        if value is None:
            value = file_config.get(key)
        return fallback if value is None else value

    threads = int(pick('threads', 1))
    if threads < 1:
        raise ConfigurationError("threads must be at least 1")
    seed = pick('seed', None)
    return RunConfig(command=command, params=params,
                     seed=None if seed is None else int(seed),
                     threads=threads, output=pick('output', None))
