"""One-document run configuration with strict key validation.

A run config is a single YAML document covering the world, model, backbone
pretraining, curriculum, teacher, and evaluation.  Every key has a default;
unknown keys are rejected so typos fail loudly instead of silently running
with defaults.  Every command writes the fully resolved config next to its
outputs, so a run is reproducible from that echo alone.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .datagen.world import WorldSpec
from .modeling.bundle import ModelConfig
from .teacher import TeacherConfig
from .training.curriculum import TEXT_SOURCES
from .training.stages import StageConfig


class ConfigError(ValueError):
    pass


def _strict(d: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {', '.join(unknown)}")


def _dataclass_from(cls, d: dict, context: str, **extra):
    _strict(d, {f.name for f in fields(cls)} - set(extra), context)
    try:
        return cls(**{**d, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


@dataclass
class PretrainConfig:
    epochs: int = 3
    batch_size: int = 64
    lr: float = 1e-3
    ppl_threshold: float = 20.0
    mask_rate: float = 0.15
    min_texts: int = 10_000


@dataclass
class TeacherSection:
    enabled: bool = False
    level: int = 2
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    held_out_fraction: float = 0.1
    min_pairs: int = 1000
    spans_per_video: int = 8
    ratio_cap: float = 5.0

    def model_config(self, seed: int) -> TeacherConfig:
        return TeacherConfig(level=self.level, epochs=self.epochs,
                             batch_size=self.batch_size, lr=self.lr,
                             held_out_fraction=self.held_out_fraction,
                             min_pairs=self.min_pairs, seed=seed)


@dataclass
class EvalConfig:
    split: str = "test"
    decoding: str = "greedy"
    beam_width: int = 1

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"bad eval split {self.split!r}")


def _default_stages() -> list[dict]:
    return [
        {"stage": "CLIP", "epochs": 5, "batch_size": 32},
        {"stage": "SEGMENT", "epochs": 10, "batch_size": 16},
        {"stage": "SUMMARY", "epochs": 10, "batch_size": 16},
    ]


@dataclass
class RunConfig:
    seed: int = 0
    n_videos: int = 2000
    world: WorldSpec = field(default_factory=WorldSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    stages: list[StageConfig] = field(default_factory=list)
    text_source: str = "model"
    teacher: TeacherSection = field(default_factory=TeacherSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not self.stages:
            self.stages = [_dataclass_from(StageConfig, d, "curriculum.stages",
                                           seed=self.seed)
                           for d in _default_stages()]
        if self.text_source not in TEXT_SOURCES:
            raise ConfigError(f"bad curriculum.text_source {self.text_source!r}")
        if self.n_videos < 1:
            raise ConfigError("world.n_videos must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _strict(d, {"seed", "world", "model", "pretrain", "curriculum",
                    "teacher", "eval"}, "config")
        seed = d.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")

        world_d = dict(d.get("world", {}))
        n_videos = world_d.pop("n_videos", 2000)
        world_d.setdefault("seed", seed)
        world = _dataclass_from(WorldSpec, world_d, "world")
        try:
            world.validate()
        except ValueError as exc:
            raise ConfigError(f"world: {exc}") from exc

        model = _dataclass_from(ModelConfig, dict(d.get("model", {})), "model")
        try:
            model.validate()
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc

        pretrain = _dataclass_from(PretrainConfig, dict(d.get("pretrain", {})),
                                   "pretrain")

        curriculum_d = dict(d.get("curriculum", {}))
        _strict(curriculum_d, {"text_source", "stages"}, "curriculum")
        text_source = curriculum_d.get("text_source", "model")
        stage_dicts = curriculum_d.get("stages", _default_stages())
        stages = []
        for sd in stage_dicts:
            sd = dict(sd)
            sd.setdefault("seed", seed)
            stages.append(_dataclass_from(StageConfig, sd, "curriculum.stages"))

        teacher = _dataclass_from(TeacherSection, dict(d.get("teacher", {})),
                                  "teacher")
        eval_cfg = _dataclass_from(EvalConfig, dict(d.get("eval", {})), "eval")
        return cls(seed=seed, n_videos=n_videos, world=world, model=model,
                   pretrain=pretrain, stages=stages, text_source=text_source,
                   teacher=teacher, eval=eval_cfg)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "world": {**self.world.to_dict(), "n_videos": self.n_videos},
            "model": self.model.to_dict(),
            "pretrain": asdict(self.pretrain),
            "curriculum": {
                "text_source": self.text_source,
                "stages": [asdict(s) for s in self.stages],
            },
            "teacher": asdict(self.teacher),
            "eval": asdict(self.eval),
        }

    def write_resolved(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)
