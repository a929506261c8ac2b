"""Configuration management for xmlforest."""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import psutil

from .exceptions import ConfigError
from .tree import TrainConfig

logger = logging.getLogger("xmlforest")

ENV_PREFIX = "XMLFOREST_"

DEFAULT_CONFIG: Dict[str, Any] = {
    "trees": 50,
    "k": 10,
    "nleaf": 10,
    "ns": 20000,
    "proj_dx": 0,  # 0 = min(d_x, proj_cap)
    "proj_dy": 0,  # 0 = min(d_y, proj_cap)
    "proj_cap": 10000,
    "proj_dx_source": "features",
    "kmeans_iters": 20,
    "seed": 0,
    "threads": psutil.cpu_count(logical=True) or 1,
    "spawn_depth": 1,
    "backend": "loky",
    "verbose": True,
    "retries": 3,
    "receive_timeout": 30.0,  # seconds
    "connect_timeout": 5.0,  # seconds
    "topk": 5,
}

_CHOICES = {
    "proj_dx_source": ("features", "labels"),
    "backend": ("loky", "threading"),
}
_NON_NEGATIVE = ("proj_dx", "proj_dy", "seed", "spawn_depth", "retries")
_POSITIVE = (
    "trees",
    "k",
    "nleaf",
    "ns",
    "proj_cap",
    "kmeans_iters",
    "threads",
    "receive_timeout",
    "connect_timeout",
    "topk",
)


def coerce_value(key: str, value: Any, line: Optional[int] = None) -> Any:
    """Convert ``value`` to the type of ``key``'s default and range-check it."""
    if key not in DEFAULT_CONFIG:
        raise ConfigError(f"unknown key {key!r}", line=line)
    default = DEFAULT_CONFIG[key]
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered not in ("true", "1", "yes", "on", "false", "0", "no", "off"):
                    raise ValueError(value)
                value = lowered in ("true", "1", "yes", "on")
            else:
                value = bool(value)
        elif isinstance(default, int):
            value = int(value)
        elif isinstance(default, float):
            value = float(value)
        else:
            value = str(value).strip()
    except ValueError:
        raise ConfigError(
            f"invalid {type(default).__name__} for {key!r}: {value!r}", line=line
        ) from None

    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(
            f"{key} must be one of {', '.join(_CHOICES[key])}, got {value!r}", line=line
        )
    if key in _POSITIVE and value <= 0:
        raise ConfigError(f"{key} must be positive, got {value}", line=line)
    if key in _NON_NEGATIVE and value < 0:
        raise ConfigError(f"{key} must be >= 0, got {value}", line=line)
    return value


def parse_config_text(text: str) -> Dict[str, Any]:
    """Parse ``key=value`` lines; '#' starts a comment."""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {line!r}", line=lineno)
        key = key.strip().lower().replace("-", "_")
        values[key] = coerce_value(key, value.strip(), line=lineno)
    return values


class Config:
    """Configuration manager for xmlforest."""

    def __init__(self, config_file: Optional[Union[str, Path]] = None):
        """Initialize configuration.

        Args:
            config_file: Optional ``key=value`` file layered over the defaults
        """
        self.config_file = Path(config_file) if config_file else None
        self._config = DEFAULT_CONFIG.copy()
        if self.config_file is not None:
            self._config.update(self._load_config(self.config_file))

    def _load_config(self, path: Path) -> Dict[str, Any]:
        """Load values from the config file."""
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
        return parse_config_text(text)

    def get(self, key: str, default: Any = None) -> Any:
        return self._config.get(key, default)

    def set(self, key: str, value: Any) -> None:
        """Set one value, converting strings to the key's type."""
        self._config[key] = coerce_value(key, value)

    def update(self, config_dict: Mapping[str, Any]) -> None:
        for key, value in config_dict.items():
            self.set(key, value)

    def reset_to_defaults(self) -> None:
        """Reset configuration to default values."""
        self._config = DEFAULT_CONFIG.copy()

    def get_all(self) -> Dict[str, Any]:
        """Get all configuration values.

        Returns:
            Complete configuration dictionary
        """
        return self._config.copy()

    # Convenience properties for common settings
    @property
    def n_trees(self) -> int:
        return self.get("trees", 50)

    @property
    def threads(self) -> int:
        return self.get("threads", 1)

    @threads.setter
    def threads(self, value: int) -> None:
        self.set("threads", value)

    @property
    def verbose(self) -> bool:
        return self.get("verbose", True)

    @verbose.setter
    def verbose(self, value: bool) -> None:
        self.set("verbose", value)

    @property
    def backend(self) -> str:
        return self.get("backend", "loky")

    @property
    def top_k(self) -> int:
        return self.get("topk", 5)

    @property
    def projection_cap(self) -> int:
        return self.get("proj_cap", 10000)

    @property
    def dx_source(self) -> str:
        return self.get("proj_dx_source", "features")

    def to_train_config(self) -> TrainConfig:
        """Training hyperparameters; projection dims stay 0 until resolved on data."""
        return TrainConfig(
            k=self.get("k"),
            n_leaf=self.get("nleaf"),
            n_s=self.get("ns"),
            proj_dx=self.get("proj_dx"),
            proj_dy=self.get("proj_dy"),
            kmeans_iters=self.get("kmeans_iters"),
            master_seed=self.get("seed"),
            n_trees=self.get("trees"),
        )


def load_config_from_env(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Collect ``XMLFOREST_<KEY>`` overrides, skipping invalid ones with a warning.

    Returns:
        Configuration dictionary from environment
    """
    environ = os.environ if environ is None else environ
    env_config: Dict[str, Any] = {}
    for key in DEFAULT_CONFIG:
        env_var = ENV_PREFIX + key.upper()
        value = environ.get(env_var)
        if value is None:
            continue
        try:
            env_config[key] = coerce_value(key, value)
        except ConfigError as e:
            logger.warning(f"[WARN] Ignoring {env_var}: {e}")
    return env_config


# Global config instance
_global_config: Optional[Config] = None


def get_config(config_file: Optional[Union[str, Path]] = None) -> Config:
    """Global configuration: defaults, then ``config_file``, then the environment."""
    global _global_config
    if _global_config is None:
        _global_config = Config(config_file)
        env_config = load_config_from_env()
        if env_config:
            _global_config.update(env_config)
    return _global_config


def reload_config(config_file: Optional[Union[str, Path]] = None) -> Config:
    global _global_config
    _global_config = None
    return get_config(config_file)
