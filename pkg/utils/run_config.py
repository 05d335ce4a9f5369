"""
Run configuration
Flat dotted JSON keys (model.*, train.*, paths.*, eval.*, analyze.*)
"""
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

from models.complexity import parse_resolution
from models.config import EPNetConfig, TrainConfig
from utils.errors import ConfigError

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.json"


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = ""
    checkpoint: str = ""
    output_dir: str = "output"
    hr_dir: str = ""


@dataclass(frozen=True)
class EvalConfig:
    raw_weights: bool = False
    workers: int = 1


@dataclass(frozen=True)
class AnalyzeConfig:
    resolution: str = "1280x720"
    pfem_sweep: int = 0
    ablation_table: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs, grouped by section"""

    model: EPNetConfig = field(default_factory=EPNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        if self.eval.workers < 1:
            raise ConfigError(f"eval.workers must be >= 1, got {self.eval.workers}")
        if self.analyze.pfem_sweep < 0:
            raise ConfigError(f"analyze.pfem_sweep must be >= 0, got {self.analyze.pfem_sweep}")
        parse_resolution(self.analyze.resolution)
        return self

    @property
    def resolution(self) -> Tuple[int, int]:
        return parse_resolution(self.analyze.resolution)

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    def to_flat(self) -> Dict[str, Any]:
        flat = {}
        for section in fields(self):
            group = getattr(self, section.name)
            for f in fields(group):
                flat[f"{section.name}.{f.name}"] = getattr(group, f.name)
        return flat

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> "RunConfig":
        return cls().with_overrides(flat)

    def with_overrides(self, flat: Mapping[str, Any]) -> "RunConfig":
        """Copy with dotted keys replaced; unknown keys are rejected"""
        sections = {s.name: s for s in fields(self)}
        updates: Dict[str, Dict[str, Any]] = {}
        for key, value in flat.items():
            section, _, name = key.partition(".")
            if section not in sections or not name:
                raise ConfigError(f"Unknown config key {key!r}")
            group = getattr(self, section)
            types = {f.name: f.type for f in fields(group)}
            if name not in types:
                raise ConfigError(f"Unknown config key {key!r}")
            updates.setdefault(section, {})[name] = coerce(key, value, types[name])
        groups = {name: replace(getattr(self, name), **changes) for name, changes in updates.items()}
        return replace(self, **groups).validate()


def coerce(key: str, value: Any, kind: type) -> Any:
    """Convert a JSON or command-line value to the field's declared type"""
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key} expects true/false, got {value!r}")
    if kind is int:
        if isinstance(value, bool):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        if isinstance(value, float) and value.is_integer():
            return int(value)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} expects an integer, got {value!r}") from None
    if kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} expects a number, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(f"{key} expects a string, got {value!r}")
    return value


def parse_set_option(text: str) -> Tuple[str, Any]:
    """'train.lr=1e-3' -> ('train.lr', 0.001); non-JSON values stay strings"""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object of dotted keys")
    return RunConfig.from_flat(data)


def echo_config(config: RunConfig, output_dir: Union[str, Path, None] = None) -> Path:
    """Write the fully resolved config next to the run's outputs"""
    out = Path(output_dir) if output_dir is not None else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESOLVED_CONFIG_FILE
    path.write_text(json.dumps(config.to_flat(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"💾 Resolved config: {path}")
    return path
