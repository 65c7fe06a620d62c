import os
import io
import configparser
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence

import aiofiles
from pydantic import ValidationError

from app.models.schemas import (
    ConstellationConfig,
    CpanConfig,
    ExperimentConfig,
    FiberParams,
    NumericsConfig,
)
from app.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[2]
CONFIG_DIR = PROJECT_ROOT / "configs"

SUPPORTED_EXTENSIONS = (".ini", ".cfg", ".json")
LIST_KEYS = {"powers_dbm": float, "stages": int, "receivers": str}
SECTION_MODELS = {
    "constellation": ConstellationConfig,
    "fiber": FiberParams,
    "numerics": NumericsConfig,
    "cpan": CpanConfig,
}


def parse_power_grid(value: str) -> List[float]:
    """Comma list ("-8, -6.5") or inclusive range ("-14:-3:1")."""
    value = value.strip()
    if ":" in value:
        parts = [float(v) for v in value.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigurationError(f"Power range must be start:stop:step, got {value!r}")
        start, stop, step = parts
        count = int(round((stop - start) / step)) + 1
        return [round(start + k * step, 10) for k in range(count)]
    return [float(v) for v in value.split(",") if v.strip()]


def _parse_list(key: str, value: str) -> List[Any]:
    if key == "powers_dbm":
        return parse_power_grid(value)
    cast = LIST_KEYS[key]
    return [cast(v.strip()) for v in value.split(",") if v.strip()]


class ConfigLoader:
    """Reads experiment configs from INI (or JSON) files"""

    @staticmethod
    def validate_file_format(filename: str) -> bool:
        return os.path.splitext(filename or "")[1].lower() in SUPPORTED_EXTENSIONS

    @staticmethod
    def validate_file_size(size_bytes: int, max_size_mb: int = 1) -> bool:
        return size_bytes <= max_size_mb * 1024 * 1024

    @staticmethod
    def parse_ini(text: str) -> ExperimentConfig:
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigurationError(f"Malformed config: {e}")
        if not parser.has_section("experiment"):
            raise ConfigurationError("Config needs an [experiment] section")

        data: Dict[str, Any] = {}
        for key, value in parser.items("experiment"):
            data[key] = _parse_list(key, value) if key in LIST_KEYS else value
        for section, model in SECTION_MODELS.items():
            if parser.has_section(section):
                unknown = set(parser.options(section)) - set(model.model_fields)
                if unknown:
                    raise ConfigurationError(f"Unknown keys in [{section}]: {sorted(unknown)}")
                data[section] = {k: v for k, v in parser.items(section) if v.strip()}
        unknown = set(parser.sections()) - set(SECTION_MODELS) - {"experiment"}
        if unknown:
            raise ConfigurationError(f"Unknown config sections: {sorted(unknown)}")
        return ConfigLoader.from_dict(data)

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid experiment config: {e}")

    @staticmethod
    def parse(text: str, filename: str = "config.ini") -> ExperimentConfig:
        if filename.lower().endswith(".json"):
            try:
                return ConfigLoader.from_dict(json.loads(text))
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"Malformed JSON config: {e}")
        return ConfigLoader.parse_ini(text)

    @staticmethod
    def load(path: str) -> ExperimentConfig:
        if not ConfigLoader.validate_file_format(path):
            raise ConfigurationError(f"Unsupported config format: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            logger.error(f"Error reading config {path}: {e}")
            raise ConfigurationError(f"Cannot read config {path}: {e}")
        cfg = ConfigLoader.parse(text, path)
        logger.info(f"Loaded {cfg.channel} experiment config from {path}")
        return cfg

    @staticmethod
    async def load_async(path: str) -> ExperimentConfig:
        async with aiofiles.open(path, "r", encoding="utf-8") as f:
            text = await f.read()
        return ConfigLoader.parse(text, path)


def _format_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_ini(cfg: ExperimentConfig) -> str:
    """Serialize a config; parse_ini(config_to_ini(cfg)) == cfg."""
    parser = configparser.ConfigParser()
    dumped = cfg.model_dump()
    parser["experiment"] = {
        k: _format_value(v) for k, v in dumped.items() if k not in SECTION_MODELS and v is not None
    }
    for section in SECTION_MODELS:
        parser[section] = {k: _format_value(v) for k, v in dumped[section].items() if v is not None}
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def confine_path(path: str, allowed_dirs: Sequence[str]) -> str:
    """Absolute form of path, which must lie under one of allowed_dirs.

    Relative paths are taken from the project root.
    """
    def absolute(p: str) -> Path:
        candidate = Path(p)
        if not candidate.is_absolute():
            candidate = PROJECT_ROOT / candidate
        return candidate.resolve()

    resolved = absolute(path)
    if not any(resolved.is_relative_to(absolute(d)) for d in allowed_dirs):
        raise ConfigurationError(f"Path {path!r} is outside the readable data directories")
    return str(resolved)
