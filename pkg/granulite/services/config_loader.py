"""
Configuration loading for Granulite.

This module provides functionality for:
1. Loading packaged YAML and user YAML or `key = value` files with uniform error reporting
2. Merging defaults, environment, config file and CLI flags into a PipelineConfig
"""
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from granulite.errors import ConfigError
from granulite.schemas.config import PipelineConfig

logger = logging.getLogger(__name__)

SERVICES_DIR = os.path.dirname(os.path.abspath(__file__))
LOG_LEVEL_ENV = "GRANULITE_LOG_LEVEL"
FLAT_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_-]*)\s*=\s*(.*?)\s*$")


def load_yaml_config(filename: Union[str, Path], required_key: Optional[str] = None) -> Any:
    """
    Load a YAML file. Relative names resolve against the services directory.

    Raises:
        ConfigError: missing, empty or malformed file, or missing required key
    """
    filepath = Path(filename)
    if not filepath.is_absolute() and not filepath.exists():
        filepath = Path(SERVICES_DIR) / filepath
    try:
        with open(filepath, "r", encoding="utf-8") as file:
            config = yaml.safe_load(file)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {filename}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {filename}: {e}") from None
    except OSError as e:
        raise ConfigError(f"Error loading {filename}: {e}") from None
    if config is None:
        raise ConfigError(f"Empty configuration file: {filename}")
    if required_key:
        if not isinstance(config, dict) or required_key not in config:
            raise ConfigError(f"Missing required key '{required_key}' in {filename}")
        return config[required_key]
    return config


def environment_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """PipelineConfig fields set through GRANULITE_* variables."""
    environ = os.environ if environ is None else environ
    mapping = load_yaml_config("defaults.yaml", "environment")
    return {field: environ[name] for name, field in mapping.items() if environ.get(name)}


def log_settings(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    settings = dict(load_yaml_config("defaults.yaml", "logging"))
    if environ.get(LOG_LEVEL_ENV):
        settings["level"] = environ[LOG_LEVEL_ENV].upper()
    return settings


def parse_flat_config(text: str, source: str = "config") -> Dict[str, Any]:
    """
    Parse `key = value` lines. Blank lines and `#` comments are skipped,
    dashes in keys become underscores and each value is read as a YAML scalar
    or flow sequence, so `sieves = [0.5, 1, 2]` yields a list.

    Raises:
        ConfigError: a line that is not `key = value` or an unreadable value
    """
    settings: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        match = FLAT_LINE.match(line)
        if match is None:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {stripped!r}")
        key, raw = match.groups()
        try:
            settings[key.replace("-", "_")] = yaml.safe_load(raw) if raw else None
        except yaml.YAMLError:
            raise ConfigError(f"{source}:{number}: cannot read value {raw!r}") from None
    return settings


def load_user_config(path: Path) -> Dict[str, Any]:
    """
    Settings from a `--config` file: a YAML mapping, or flat `key = value`
    lines when the first setting uses `=`.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Error loading {path}: {e}") from None
    meaningful = [ln for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if meaningful and FLAT_LINE.match(meaningful[0]):
        return parse_flat_config(text, str(path))
    user = load_yaml_config(path)
    if not isinstance(user, dict):
        raise ConfigError(f"{path} must contain key: value or key = value settings")
    return user


def load_pipeline_config(
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
    dotenv: bool = True,
) -> PipelineConfig:
    """
    Build the effective configuration.

    Precedence: packaged defaults < environment < config file < overrides
    (CLI flags). Override values of None are treated as unset.

    Raises:
        ConfigError: unreadable file, unknown key or out-of-range value
    """
    if dotenv and environ is None:
        load_dotenv()
    merged: Dict[str, Any] = dict(load_yaml_config("defaults.yaml", "pipeline"))
    merged.update(environment_overrides(environ))

    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")
        user = load_user_config(path)
        merged.update(user)
        logger.debug("Loaded %d settings from %s", len(user), path)

    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return PipelineConfig(**merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {problems}") from None


def require_file(path: Optional[Path], what: str = "input") -> Path:
    """
    Raises:
        ConfigError: the path is unset or does not name an existing file
    """
    if path is None:
        raise ConfigError(f"--{what} is required")
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")
    return Path(path)
