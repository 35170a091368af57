"""Run configuration files (YAML with a leading ``format-version: 1`` line)."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .alignment import AlignmentConfig
from .rewards import RewardConfig
from .rl.trainer import TrainerConfig
from .targets import NoiseConfig

FORMAT_VERSION = 1
PACKAGED = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)


def _build(cls, d):
    d = dict(d or {})
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} options: {sorted(unknown)}")
    if cls is TrainerConfig:
        return TrainerConfig.from_dict(d)
    if "joints" in d and d["joints"] is not None:
        d["joints"] = tuple(d["joints"])
    return cls(**d)


def resolve(path_or_name) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    packaged = PACKAGED / f"{path_or_name}.yaml"
    if packaged.exists():
        return packaged
    raise ConfigError(f"no such config: {path_or_name}")


def load_config(path_or_name="desk") -> RunConfig:
    path = resolve(path_or_name)
    text = path.read_text()
    if not text.startswith("format-version:"):
        raise ConfigError(f"{path}: missing format-version line")
    doc = yaml.safe_load(text) or {}
    if doc.pop("format-version", None) != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format-version")
    sections = {"noise": NoiseConfig, "alignment": AlignmentConfig, "trainer": TrainerConfig,
                "reward": RewardConfig}
    extra = set(doc) - set(sections)
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    try:
        return RunConfig(**{k: _build(c, doc.get(k)) for k, c in sections.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
