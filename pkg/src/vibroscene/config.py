"""Experiment configuration: nested dataclasses with JSON round-tripping and presets."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import StftConfig
from .geometry import DEFAULT_SHAPES, BoxWorld
from .nn.model import ModelConfig
from .simulator import AcousticsConfig, TrajectoryConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    batch_size: int = 32
    base_lr: float = 1e-3
    milestones: tuple[int, ...] = (20, 50, 100)
    lr_decay: float = 0.5
    targets: tuple[str, ...] = ("rgb", "depth")


@dataclass(frozen=True)
class DataConfig:
    n_episodes: int = 1000
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    shapes: tuple[str, ...] = ("cube", "block", "stick")
    segment_threshold: float = 1e-3
    image_size: int = 128


@dataclass(frozen=True)
class EvalConfig:
    binarize_tol: float = 0.15
    grid_res_m: float = 0.005
    tdoa_bounce: int = 3
    amplitude_tau: float = 0.5
    shift_magnitudes_samples: tuple[int, ...] = (0, 100, 500)
    shift_source_rate: int = 44000


@dataclass(frozen=True)
class PathsConfig:
    dataset_dir: str = "data"
    run_dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    scale: str = "desk"
    world: BoxWorld = field(default_factory=BoxWorld)
    acoustics: AcousticsConfig = field(default_factory=AcousticsConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(filter_scale=0.25))
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    data_seed: int = 7
    train_seeds: tuple[int, ...] = (0, 1, 2)
    workers: int = 1

    def __post_init__(self):
        if abs(sum(self.data.split) - 1.0) > 1e-9:
            raise ConfigError("split fractions must sum to 1")
        unknown = set(self.data.shapes) - set(DEFAULT_SHAPES)
        if unknown or not self.data.shapes:
            raise ConfigError(f"unknown shapes: {sorted(unknown)}")
        if self.data.image_size != self.model.input_size:
            raise ConfigError("image size must match the model input size")
        if not self.train_seeds:
            raise ConfigError("at least one training seed is required")
        bad = set(self.training.targets) - {"rgb", "depth"}
        if bad or not self.training.targets:
            raise ConfigError(f"unknown training targets: {sorted(bad)}")

    @property
    def shape_specs(self):
        return [DEFAULT_SHAPES[s] for s in self.data.shapes]

    def model_config(self, target: str) -> ModelConfig:
        return dataclasses.replace(self.model, out_channels=3 if target == "rgb" else 1)

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return _from_jsonable(cls, d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if hasattr(obj, "value"):  # enums
        return obj.value
    return obj


def _tupleize(v):
    return tuple(_tupleize(x) for x in v) if isinstance(v, list) else v


def _from_jsonable(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kw = {}
    for name, value in d.items():
        default = getattr(cls(), name) if cls is not ExperimentConfig else getattr(_DEFAULT, name)
        if dataclasses.is_dataclass(default):
            kw[name] = _from_jsonable(type(default), value)
        else:
            kw[name] = _tupleize(value)
    return cls(**kw)


def desk_config() -> ExperimentConfig:
    return ExperimentConfig()


def paper_config() -> ExperimentConfig:
    """Full-scale settings: unscaled filters, 500 epochs, 1,575 episodes, 44.1 kHz audio."""
    return ExperimentConfig(
        scale="paper",
        world=BoxWorld(sample_rate=44100),
        model=ModelConfig(filter_scale=1.0),
        training=TrainingConfig(epochs=500),
        data=DataConfig(n_episodes=1575),
    )


PRESETS = {"desk": desk_config, "paper": paper_config}
_DEFAULT = ExperimentConfig()
