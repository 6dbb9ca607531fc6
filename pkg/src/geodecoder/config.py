"""One JSON document governing a full run: world, data, model, training, evaluation, paths, seed."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

from .model import GeoDecoderConfig
from .taskgen import TaskKind, TaskOptions, ViewportPolicy, default_mix
from .trainer import TrainHyper
from .worldgen import WorldConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    total: int = 20_000
    mix: Optional[dict] = None  # task kind -> count; None means proportional to the full-scale counts
    policy: ViewportPolicy = field(default_factory=ViewportPolicy)
    options: TaskOptions = field(default_factory=TaskOptions)
    threads: Optional[int] = None

    def resolved_mix(self) -> dict[TaskKind, int]:
        if self.mix is None:
            return default_mix(self.total)
        return {TaskKind(k): int(v) for k, v in self.mix.items()}


@dataclass(frozen=True)
class EvalConfig:
    batch_size: int = 32
    ranked: bool = True  # also score closed-set tasks by likelihood ranking
    road_threshold_m: float = 15.0
    max_samples: Optional[int] = None


@dataclass(frozen=True)
class PathsConfig:
    world: Optional[str] = None
    dataset: str = "data"
    run_dir: str = "run"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: GeoDecoderConfig = field(default_factory=GeoDecoderConfig)
    train: TrainHyper = field(default_factory=TrainHyper)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _check_keys(section: str, d: Any, cls) -> dict:
    if not isinstance(d, Mapping):
        raise ConfigError(f"{section}: expected an object, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    for k in d:
        if k not in known:
            raise ConfigError(f"{section}.{k}: unknown field")
    return dict(d)


def _build(section: str, cls, d: Mapping, convert=None):
    d = _check_keys(section, d, cls)
    try:
        if convert is not None:
            return convert(d)
        return cls(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


def _positive_int(section: str, name: str, v, allow_none: bool = False):
    if v is None and allow_none:
        return
    if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
        raise ConfigError(f"{section}.{name} must be a positive integer, got {v!r}")


def config_from_dict(d: Mapping) -> RunConfig:
    d = _check_keys("config", d, RunConfig)
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    world = _build("world", WorldConfig, d.get("world", {}), WorldConfig.from_dict)
    try:
        world.validate()
    except ValueError as e:
        raise ConfigError(f"world: {e}") from e

    def data_conv(dd):
        if "policy" in dd:
            dd["policy"] = _build("data.policy", ViewportPolicy, dd["policy"])
        if "options" in dd:
            dd["options"] = _build("data.options", TaskOptions, dd["options"], TaskOptions.from_dict)
        _positive_int("data", "total", dd.get("total", 1))
        _positive_int("data", "threads", dd.get("threads"), allow_none=True)
        mix = dd.get("mix")
        if mix is not None:
            if not isinstance(mix, Mapping):
                raise ConfigError("data.mix must map task kinds to counts")
            for k, v in mix.items():
                if k not in {t.value for t in TaskKind}:
                    raise ConfigError(f"data.mix.{k}: unknown task kind")
                if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                    raise ConfigError(f"data.mix.{k} must be a non-negative integer, got {v!r}")
            dd["mix"] = dict(mix)
        return DataConfig(**dd)

    data = _build("data", DataConfig, d.get("data", {}), data_conv)
    model = _build("model", GeoDecoderConfig, d.get("model", {}))
    train = _build("train", TrainHyper, d.get("train", {}))

    def eval_conv(dd):
        _positive_int("eval", "batch_size", dd.get("batch_size", 1))
        _positive_int("eval", "max_samples", dd.get("max_samples"), allow_none=True)
        if dd.get("road_threshold_m", 1.0) <= 0:
            raise ConfigError("eval.road_threshold_m must be positive")
        return EvalConfig(**dd)

    ev = _build("eval", EvalConfig, d.get("eval", {}), eval_conv)
    paths = _build("paths", PathsConfig, d.get("paths", {}))
    return RunConfig(seed, world, data, model, train, ev, paths)


def load_config(path=None) -> RunConfig:
    """Parse a JSON run config; absent fields take their defaults. `None` gives the all-default config."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from e
    return config_from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
