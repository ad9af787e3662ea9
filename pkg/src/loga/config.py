"""Configuration records shared by the model, data generator and trainer."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

STRATEGIES = ("mean_pool", "laq_only", "gcq_only", "dual_branch", "direct_connect", "associative")
MINING = ("random", "batch_hard")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Input data violates an operation's contract (bad label, empty tracklet, ...)."""


@dataclass
class ModelConfig:
    clip_len: int = 10
    height: int = 32
    width: int = 16
    channels: int = 1
    feature_dim: int = 64
    part_size: int = 10
    num_classes: int = 16
    encoder_channels: tuple = (8, 16)
    scaled_attention: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.encoder_channels = tuple(self.encoder_channels)
        for name in ("clip_len", "height", "width", "feature_dim", "part_size", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.height * self.width < self.part_size:
            raise ConfigError(
                f"part size {self.part_size} exceeds the flattened frame length {self.height * self.width}"
            )

    @property
    def num_parts(self) -> int:
        return (self.height * self.width - self.part_size) // self.part_size + 1


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 5e-4
    lr_decay: float = 0.1
    lr_decay_every: int = 60
    epochs: int = 30
    margin: float = 0.3
    P: int = 4
    K: int = 8
    clip_len: int = 10
    part_size: int = 10
    feature_dim: int = 64
    strategy: str = "associative"
    mining: str = "random"
    scaled_attention: bool = False
    seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.mining not in MINING:
            raise ConfigError(f"unknown triplet mining {self.mining!r}; expected one of {MINING}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.lr < 0 or self.weight_decay < 0 or self.margin < 0:
            raise ConfigError("lr, weight_decay and margin must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        for name in ("P", "K", "clip_len", "part_size", "feature_dim", "lr_decay_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")

    def model_config(self, height: int, width: int, channels: int, num_classes: int) -> ModelConfig:
        return ModelConfig(
            clip_len=self.clip_len,
            height=height,
            width=width,
            channels=channels,
            feature_dim=self.feature_dim,
            part_size=self.part_size,
            num_classes=num_classes,
            scaled_attention=self.scaled_attention,
        )


@dataclass
class NoiseSpec:
    p_occlude: float = 0.1
    p_misalign: float = 0.1
    p_idswitch: float = 0.1
    max_shift: int = 6
    occluder_height: List[int] = field(default_factory=lambda: [10, 20])
    occluder_width: List[int] = field(default_factory=lambda: [8, 16])
    occluder_intensity: List[float] = field(default_factory=lambda: [0.0, 0.15])
    camera_brightness: List[float] = field(default_factory=lambda: [0.0, 0.08])
    camera_contrast: List[float] = field(default_factory=lambda: [1.0, 0.85])
    sensor_noise: float = 0.02

    def validate(self, num_cameras: int) -> None:
        probs = (self.p_occlude, self.p_misalign, self.p_idswitch)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError(f"corruption probabilities must lie in [0, 1], got {probs}")
        if sum(probs) > 1.0 + 1e-12:
            raise ConfigError(f"corruption probabilities sum to {sum(probs)} > 1")
        if self.max_shift < 0:
            raise ConfigError("max_shift must be non-negative")
        for name in ("occluder_height", "occluder_width", "occluder_intensity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is empty: {lo} > {hi}")
        if len(self.camera_brightness) < num_cameras or len(self.camera_contrast) < num_cameras:
            raise ConfigError(f"photometric offsets must cover all {num_cameras} cameras")


@dataclass
class DatasetConfig:
    version: int = 1
    num_identities: int = 32
    tracklets_per_identity: int = 8
    frames_per_tracklet: int = 40
    clip_len: int = 10
    height: int = 32
    width: int = 16
    channels: int = 1
    num_cameras: int = 2
    body_parts: int = 4
    train_identities: int = 16
    clips_per_chunk: int = 64
    seed: int = 0
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseSpec(**self.noise)

    def validate(self) -> None:
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.num_identities < 2 or not 1 <= self.train_identities < self.num_identities:
            raise ConfigError("need at least one train and one test identity")
        if self.num_cameras < 2:
            raise ConfigError("cross-camera retrieval needs at least two cameras")
        # queries are tracklets 0..cams-1; the gallery must span at least two cameras
        if self.tracklets_per_identity < self.num_cameras + 2:
            raise ConfigError(
                "every test identity needs a query per camera and a gallery tracklet on another camera"
            )
        if min(self.frames_per_tracklet, self.clip_len, self.height, self.width, self.clips_per_chunk) < 1:
            raise ConfigError("frame counts, sizes and chunk capacity must be positive")
        self.noise.validate(self.num_cameras)


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(cls, path: Union[str, Path]):
    """Read a JSON config file into ``cls``."""
    with open(path) as fh:
        return from_dict(cls, json.load(fh))


def save_config(obj, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        json.dump(to_dict(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
