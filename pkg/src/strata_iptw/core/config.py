"""Configuration and environment handling.

Settings are layered: environment defaults (optionally from a ``.env`` file),
then a YAML run-config file, then command-line overrides.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from strata_iptw.schemas.config import DEFAULT_SEED, RunConfig
from strata_iptw.utils.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "STRATA_IPTW_"
LOG_LEVELS = ("debug", "info", "warning", "error", "critical")


@dataclass
class Config:
    """Environment defaults for strata-iptw.

    Attributes:
        log_level: Default log level
        out_dir: Default output directory
        n_boot: Default bootstrap resample count
        seed: Default seed for simulation and bootstrap
        smd_threshold: Default |SMD| flagging threshold
        formats: Default report formats
    """

    log_level: str = "info"
    out_dir: Path = Path("out")
    n_boot: int = 1000
    seed: int = DEFAULT_SEED
    smd_threshold: float = 0.1
    formats: list[str] = field(default_factory=lambda: ["json", "md"])

    @classmethod
    def from_env(cls) -> "Config":
        """Create Config from environment variables.

        Returns:
            Config instance with values from environment or defaults

        Raises:
            ConfigError: If a variable holds an unparseable value
        """
        try:
            config = cls(
                log_level=os.getenv(f"{ENV_PREFIX}LOG_LEVEL", "info").lower(),
                out_dir=Path(os.getenv(f"{ENV_PREFIX}OUT_DIR", "out")),
                n_boot=int(os.getenv(f"{ENV_PREFIX}N_BOOT", "1000")),
                seed=int(os.getenv(f"{ENV_PREFIX}SEED", str(DEFAULT_SEED))),
                smd_threshold=float(os.getenv(f"{ENV_PREFIX}SMD_THRESHOLD", "0.1")),
                formats=parse_formats(os.getenv(f"{ENV_PREFIX}FORMATS", "json,md")),
            )
        except ValueError as e:
            raise ConfigError(f"Invalid {ENV_PREFIX}* environment value: {e}") from None
        if config.log_level not in LOG_LEVELS:
            raise ConfigError(
                f"{ENV_PREFIX}LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}, got '{config.log_level}'"
            )
        return config

    def as_run_defaults(self) -> dict[str, Any]:
        """Nested run-config fragment carrying these defaults."""
        return {
            "estimation": {"n_boot": self.n_boot, "seed": self.seed},
            "balance": {"smd_threshold": self.smd_threshold},
            "output": {"out_dir": str(self.out_dir), "formats": list(self.formats)},
            "simulation": {"seed": self.seed},
        }


def load_environment() -> None:
    """Load environment variables from a .env file.

    Looks for .env in the current directory, then in parent directories.
    Silently succeeds if no file is found. Variables already set win.
    """
    env_path = Path(".env")
    if env_path.exists():
        load_dotenv(env_path, override=False)
    else:
        load_dotenv(override=False)


def parse_formats(value: str) -> list[str]:
    """Split a comma-separated format list, dropping blanks."""
    return [item.strip() for item in value.split(",") if item.strip()]


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a YAML run-config file into a mapping.

    Raises:
        ConfigError: Missing file, invalid YAML, or a non-mapping document
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping of sections")
    return data


def load_run_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Config | None = None,
) -> RunConfig:
    """Build a validated RunConfig from environment, file and overrides.

    Args:
        path: Optional YAML file
        overrides: Nested mapping applied last (typically from CLI flags)
        env: Environment defaults; read from the process environment when None

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: Any file or validation problem, with field locations
    """
    env = env or Config.from_env()
    data = env.as_run_defaults()
    if path is not None:
        data = deep_merge(data, read_config_file(path))
        logger.info(f"Loaded run config from {path}")
    if overrides:
        data = deep_merge(data, overrides)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid run configuration: {problems}") from None
