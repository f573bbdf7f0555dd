"""Run configuration: a JSON file of nested sections, every key defaulted, unknown keys rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class LasaConfig:
    window: int = 7
    enabled: bool = True
    use_position: bool = True


@dataclass
class PathsConfig:
    data_dir: str = ""
    checkpoint: str = ""
    log: str = ""


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    lasa: LasaConfig = field(default_factory=LasaConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    threads: int = 1

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.encoder, self.decoder, self.lasa.window, self.lasa.enabled, self.lasa.use_position)

    def train_config(self) -> TrainConfig:
        # the top-level seed drives all randomness
        return TrainConfig(**{**asdict(self.train), "seed": self.seed})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["k_set"] = list(d["train"]["k_set"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "")

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.loads(p.read_text())

    def override(self, dotted: str, value) -> "RunConfig":
        """Return a copy with ``section.key`` (or a top-level key) set to ``value``."""
        d = self.to_dict()
        *parents, key = dotted.split(".")
        target = d
        for part in parents:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown config section {dotted!r}")
            target = target[part]
        if key not in target:
            raise ConfigError(f"unknown config key {dotted!r}")
        target[key] = value
        return RunConfig.from_dict(d)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + u for u in unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if default is not None and is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}" if where else name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid values in {where or '<root>'}: {e}") from e
