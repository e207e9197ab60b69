"""
Run configuration for the HSRL command line
Model defaults <- key = value config file <- HSRL_ environment variables <- flags
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from agents.agent_model import TrainConfig
from corpus.synthetic import SynthConfig
from diffcore.errors import ConfigError, config_error

logger = logging.getLogger(__name__)

ENV_PREFIX = "HSRL_"
NONE_VALUES = {"", "none", "null"}

# keys read by the commands themselves rather than by a config model
COMMAND_KEYS = ("variant", "valid_records", "test_records", "gamma1_values", "gamma2_values")
ALIASES = {"topics": "K", "records": "num_records"}

KNOWN_KEYS = {
    name.lower(): name
    for model in (TrainConfig, SynthConfig)
    for name in model.model_fields
}
KNOWN_KEYS.update({key: key for key in COMMAND_KEYS})

M = TypeVar("M", bound=BaseModel)


def normalize_key(key: str) -> str:
    """'GAMMA-MAX', 'HSRL_T_MAX' and 'topics' become gamma_max, T_max and K"""
    key = key.strip().replace("-", "_")
    if key.upper().startswith(ENV_PREFIX):
        key = key[len(ENV_PREFIX):]
    key = key.lower()
    key = ALIASES.get(key, key)
    return KNOWN_KEYS.get(key.lower(), key)


def parse_value(value: Any) -> Any:
    """Strings from files and the environment: none/null/empty -> None, a,b -> [a, b]"""
    if not isinstance(value, str):
        return value
    value = value.strip()
    if value.lower() in NONE_VALUES:
        return None
    if "," in value:
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a flat key = value file; unknown keys are errors"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values = {}
    for raw_key, raw_value in dotenv_values(path).items():
        key = normalize_key(raw_key)
        if key not in KNOWN_KEYS.values():
            raise ConfigError(f"{path}: unknown config key {raw_key!r}")
        values[key] = parse_value(raw_value)
    logger.debug(f"Read {len(values)} settings from {path}")
    return values


def read_environment(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """HSRL_-prefixed variables; unknown names are skipped with a warning"""
    environ = os.environ if environ is None else environ
    values = {}
    for name, raw_value in environ.items():
        if not name.upper().startswith(ENV_PREFIX):
            continue
        key = normalize_key(name)
        if key not in KNOWN_KEYS.values():
            logger.warning(f"Ignoring unknown environment setting {name}")
            continue
        values[key] = parse_value(raw_value)
    return values


@dataclass
class RunSettings:
    """Merged settings of one command invocation"""
    values: Dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        value = self.values.get(normalize_key(key))
        return default if value is None else value

    def get_int(self, key: str, default: int) -> int:
        value = self.get(key, default)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {value!r}")

    def get_floats(self, key: str, default=()) -> list:
        value = self.get(key, default)
        if not isinstance(value, (list, tuple)):
            value = [value]
        try:
            return [float(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a comma-separated list of numbers, got {value!r}")

    def build(self, model: Type[M], **overrides) -> M:
        """Instantiate a config model from the settings it declares"""
        data = {k: v for k, v in self.values.items() if k in model.model_fields and v is not None}
        data.update(overrides)
        try:
            return model(**data)
        except ValidationError as exc:
            raise config_error(model.__name__, exc) from None


def resolve_settings(
    config_path: Optional[Union[str, Path]] = None,
    flags: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunSettings:
    """
    Merge the configuration sources, later ones winning.

    Args:
        config_path: optional key = value file
        flags: command-line values; None means the flag was not given
        environ: environment mapping (os.environ when omitted)

    Returns:
        RunSettings: merged values keyed by config field name
    """
    values: Dict[str, Any] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update(read_environment(environ))
    for raw_key, value in (flags or {}).items():
        if value is not None:
            values[normalize_key(raw_key)] = value
    return RunSettings(values)
