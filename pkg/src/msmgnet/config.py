"""Configuration dataclasses and strict loading from JSON/YAML files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    stage_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    blocks_per_stage: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    activation: str = "relu"

    @classmethod
    def full(cls) -> "BackboneConfig":
        return cls(stem_channels=64, stage_channels=[64, 128, 256, 512], blocks_per_stage=[2, 2, 2, 2])

    def validate(self) -> None:
        _check(self.stem_channels > 0, "backbone.stem_channels must be positive")
        _check(len(self.stage_channels) == 4, "backbone.stage_channels needs 4 entries")
        _check(len(self.blocks_per_stage) == 4, "backbone.blocks_per_stage needs 4 entries")
        _check(all(c > 0 for c in self.stage_channels), "backbone.stage_channels must be positive")
        _check(all(b > 0 for b in self.blocks_per_stage), "backbone.blocks_per_stage must be positive")
        _check(
            all(a <= b for a, b in zip(self.stage_channels, self.stage_channels[1:])),
            "backbone.stage_channels must be non-decreasing",
        )
        _check(self.activation in ("relu", "gelu"), "backbone.activation must be relu or gelu")


@dataclass
class GrainedConfig:
    embed_dims: list[int] = field(default_factory=lambda: [32, 32, 64, 64])
    heads: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    shunt_ratios: list[list[int]] = field(default_factory=lambda: [[8, 4], [4, 2], [2, 1], [1]])
    blocks: int = 2
    mlp_ratio: int = 4
    detail_enhance: bool = True
    enabled: list[bool] = field(default_factory=lambda: [True, True, True, True])

    @classmethod
    def toy(cls) -> "GrainedConfig":
        return cls(shunt_ratios=[[2, 1], [2, 1], [1], [1]], blocks=1)

    def validate(self) -> None:
        for name in ("embed_dims", "heads", "shunt_ratios", "enabled"):
            _check(len(getattr(self, name)) == 4, f"grained.{name} needs 4 entries")
        _check(self.blocks >= 1, "grained.blocks must be >= 1")
        _check(self.mlp_ratio >= 1, "grained.mlp_ratio must be >= 1")
        for i, (d, h, ratios) in enumerate(zip(self.embed_dims, self.heads, self.shunt_ratios)):
            _check(d > 0 and h > 0, f"grained scale {i + 1}: embed_dim and heads must be positive")
            _check(len(ratios) >= 1 and all(r >= 1 for r in ratios), f"grained scale {i + 1}: ratios must be >= 1")
            _check(h % len(ratios) == 0, f"grained scale {i + 1}: {h} heads not divisible by {len(ratios)} ratio groups")
            _check(d % h == 0, f"grained scale {i + 1}: embed_dim {d} not divisible by {h} heads")


@dataclass
class FusionConfig:
    fuse_channels: list[int] = field(default_factory=lambda: [32, 32, 64])
    edge_channels: int = 16
    head_channels: int = 32

    def validate(self) -> None:
        _check(len(self.fuse_channels) == 3, "fusion.fuse_channels needs 3 entries (levels 1..3)")
        _check(all(c > 0 for c in self.fuse_channels), "fusion.fuse_channels must be positive")
        _check(self.edge_channels > 0 and self.head_channels > 0, "fusion channel counts must be positive")


@dataclass
class ModelConfig:
    input_size: int = 512
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    grained: GrainedConfig = field(default_factory=GrainedConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    @classmethod
    def toy(cls, input_size: int = 64) -> "ModelConfig":
        """Small CPU-friendly model: one transformer block per scale, ratios [2,1] / [1]."""
        return cls(input_size=input_size, grained=GrainedConfig.toy())

    def validate(self) -> None:
        _check(self.input_size > 0 and self.input_size % 32 == 0, "input_size must be a positive multiple of 32")
        self.backbone.validate()
        self.grained.validate()
        self.fusion.validate()
        for i, ratios in enumerate(self.grained.shunt_ratios):
            grid = self.input_size // (4 * 2**i)
            for r in ratios:
                _check(grid % r == 0, f"grained scale {i + 1}: ratio {r} does not divide the {grid}x{grid} grid")

    def fingerprint(self) -> str:
        blob = json.dumps(to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class LossWeights:
    gamma_r: float = 0.75
    gamma_e: float = 0.25

    def validate(self) -> None:
        _check(self.gamma_r >= 0 and self.gamma_e >= 0, "loss weights must be non-negative")
        _check(abs(self.gamma_r + self.gamma_e - 1.0) < 1e-9, "loss weights must sum to 1")


@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    blur_p: float = 0.2
    blur_kernels: list[int] = field(default_factory=lambda: [3, 5])
    jpeg_p: float = 0.2
    jpeg_quality: list[int] = field(default_factory=lambda: [70, 100])

    def validate(self) -> None:
        for p in (self.flip_p, self.blur_p, self.jpeg_p):
            _check(0.0 <= p <= 1.0, "augmentation probabilities must lie in [0, 1]")
        _check(all(k % 2 == 1 for k in self.blur_kernels), "blur kernels must be odd")
        lo, hi = self.jpeg_quality
        _check(1 <= lo <= hi <= 100, "jpeg_quality must be [lo, hi] within 1..100")

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(flip_p=0.0, blur_p=0.0, jpeg_p=0.0)


@dataclass
class TrainConfig:
    batch_size: int = 4
    max_steps: int = 1000
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    schedule: str = "cosine"
    decay_periods: int = 4
    seed: int = 0
    edge_loss: bool = True
    dice_smooth: float = 1.0
    edge_width: int = 3
    eval_every: int = 0
    checkpoint_every: int = 0
    log_every: int = 1
    loss: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        _check(self.batch_size >= 1, "train.batch_size must be >= 1")
        _check(self.max_steps >= 0, "train.max_steps must be >= 0")
        _check(self.lr_start >= self.lr_end > 0, "need lr_start >= lr_end > 0")
        _check(self.schedule in ("cosine", "step"), "train.schedule must be cosine or step")
        _check(self.decay_periods >= 1, "train.decay_periods must be >= 1")
        _check(self.edge_width >= 1, "train.edge_width must be >= 1")
        self.loss.validate()
        self.augment.validate()


@dataclass
class RobustnessConfig:
    kinds: list[str] = field(default_factory=lambda: ["gaussian_blur", "gaussian_noise", "jpeg", "iso_noise"])
    seed: int = 0

    def validate(self) -> None:
        known = {"gaussian_blur", "gaussian_noise", "jpeg", "iso_noise"}
        _check(set(self.kinds) <= known, f"robustness.kinds must be drawn from {sorted(known)}")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.robustness.validate()
        return self


def to_dict(cfg) -> dict[str, Any]:
    return dataclasses.asdict(cfg)


def from_dict(cls, data: dict[str, Any], path: str = ""):
    """Build ``cls`` from a nested mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys at '{path or 'root'}': {sorted(unknown)}")
    kwargs = {}
    hints = {f.name: f.type for f in dataclasses.fields(cls)}
    for name, value in data.items():
        sub = _NESTED.get(hints[name])
        kwargs[name] = from_dict(sub, value, f"{path}.{name}".lstrip(".")) if sub else value
    return cls(**kwargs)


_NESTED = {
    "BackboneConfig": BackboneConfig,
    "GrainedConfig": GrainedConfig,
    "FusionConfig": FusionConfig,
    "ModelConfig": ModelConfig,
    "LossWeights": LossWeights,
    "AugmentConfig": AugmentConfig,
    "TrainConfig": TrainConfig,
    "RobustnessConfig": RobustnessConfig,
}


def set_by_path(data: dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def load_run_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Load a run config file (``.json``, ``.yaml``/``.yml``) and apply dotted overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        try:
            if path.suffix in (".yaml", ".yml"):
                data = yaml.safe_load(text) or {}
            else:
                data = json.loads(text)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a mapping")
    base = to_dict(from_dict(RunConfig, data))
    for k, v in (overrides or {}).items():
        set_by_path(base, k, v)
    return from_dict(RunConfig, base).validate()


def save_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")
