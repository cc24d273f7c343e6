"""Settings resolution: CLI flags beat environment variables beat config file.

The config file is ``.methodolint.toml`` in the working directory (or an
explicit path). Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .client import ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL, EndpointConfig

__all__ = ["CONFIG_FILENAME", "ConfigError", "load_config_file", "resolve_endpoint",
           "setting"]

CONFIG_FILENAME = ".methodolint.toml"

_KNOWN_KEYS: dict[str, type | tuple[type, ...]] = {
    "endpoint": str,
    "model": str,
    "api_key": str,
    "categories": list,
    "patterns": list,
    "format": str,
    "max_concurrency": int,
    "max_input_tokens": int,
    "chars_per_token": (int, float),
    "file_parallelism": int,
    "exclude": list,
    "request_timeout": (int, float),
    "max_retries": int,
}


class ConfigError(Exception):
    """Config file missing (when explicitly named), unparseable, or invalid."""


def load_config_file(path: Path | str | None = None,
                     start_dir: Path | str | None = None) -> dict[str, Any]:
    """Read settings from a config file; {} when no file exists.

    An explicitly named path must exist; the implicit lookup in ``start_dir``
    (default: cwd) is optional.
    """
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
    else:
        config_path = Path(start_dir or Path.cwd()) / CONFIG_FILENAME
        if not config_path.is_file():
            return {}
    try:
        data = tomllib.loads(config_path.read_text(encoding="utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError, OSError) as exc:
        raise ConfigError(f"{config_path}: {exc}") from exc

    unknown = set(data) - set(_KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"{config_path}: unknown config keys {sorted(unknown)}")
    for key, typ in _KNOWN_KEYS.items():
        if key in data and not isinstance(data[key], typ):
            raise ConfigError(f"{config_path}: key {key!r} has wrong type")
    return data


def setting(cli_value, env_var: str | None, file_cfg: Mapping[str, Any],
            file_key: str, default=None):
    """First defined value in CLI > environment > config file > default order."""
    if cli_value is not None and cli_value != ():
        return cli_value
    if env_var:
        env_value = os.environ.get(env_var)
        if env_value is not None:
            return env_value
    if file_key in file_cfg:
        return file_cfg[file_key]
    return default


def resolve_endpoint(
    file_cfg: Mapping[str, Any],
    endpoint: str | None = None,
    model: str | None = None,
    api_key: str | None = None,
    max_concurrency: int | None = None,
) -> EndpointConfig:
    return EndpointConfig(
        base_url=setting(endpoint, ENV_ENDPOINT, file_cfg, "endpoint",
                         "http://127.0.0.1:8000"),
        model_name=setting(model, ENV_MODEL, file_cfg, "model", "default"),
        api_key=setting(api_key, ENV_API_KEY, file_cfg, "api_key"),
        request_timeout=float(setting(None, None, file_cfg, "request_timeout", 120.0)),
        max_retries=int(setting(None, None, file_cfg, "max_retries", 2)),
        max_concurrency=int(setting(max_concurrency, None, file_cfg,
                                    "max_concurrency", 8)),
    )
