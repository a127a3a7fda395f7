"""R-down stem and four residual stages producing the feature pyramid f1..f4."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from . import core
from .config import BackboneConfig


class InputSizeError(ValueError):
    pass


class FeaturePyramid(NamedTuple):
    """Per-scale maps at strides 4, 8, 16 and 32."""

    f1: torch.Tensor
    f2: torch.Tensor
    f3: torch.Tensor
    f4: torch.Tensor


def check_input_size(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise core.DimensionError("backbone", "channels", f"expected N x 3 x H x W, got {tuple(x.shape)}")
    h, w = x.shape[2:]
    if h % 32 or w % 32:
        raise InputSizeError(f"image size {h}x{w} is not a multiple of 32; resize or pad to a multiple of 32")


def he_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class RDown(nn.Module):
    """3x3 stride-2 conv, BN, activation, then 2x2 max-pool: H x W -> H/4 x W/4."""

    def __init__(self, out_channels: int, activation: str = "relu"):
        super().__init__()
        self.conv = nn.Conv2d(3, out_channels, 3, stride=2, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(out_channels)
        self.activation = activation

    def forward(self, x):
        check_input_size(x)
        x = core.conv2d(x, self.conv.weight, None, stride=2, padding=1)
        x = core.activation(self.bn(x), self.activation)
        return core.max_pool2d(x, 2, 2)


class ResidualBlock(nn.Module):
    """Basic residual block: ``act(F(x) + shortcut(x))``.

    The shortcut is the identity when shapes match and a strided 1x1 conv
    (with BN) otherwise.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, activation: str = "relu"):
        super().__init__()
        self.in_channels = in_channels
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.activation = activation
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.shortcut = nn.Identity()

    def zero_residual(self) -> None:
        nn.init.zeros_(self.bn2.weight)
        nn.init.zeros_(self.bn2.bias)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise core.DimensionError("resnet_block", "channels", f"expected {self.in_channels}, got {x.shape[1]}")
        out = core.activation(self.bn1(self.conv1(x)), self.activation)
        out = self.bn2(self.conv2(out))
        return core.activation(out + self.shortcut(x), self.activation)


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        cfg = cfg or BackboneConfig()
        cfg.validate()
        self.cfg = cfg
        self.r_down = RDown(cfg.stem_channels, cfg.activation)
        stages = []
        in_ch = cfg.stem_channels
        for i, (ch, depth) in enumerate(zip(cfg.stage_channels, cfg.blocks_per_stage)):
            stride = 1 if i == 0 else 2
            blocks = [ResidualBlock(in_ch, ch, stride, cfg.activation)]
            blocks += [ResidualBlock(ch, ch, 1, cfg.activation) for _ in range(depth - 1)]
            stages.append(nn.Sequential(*blocks))
            in_ch = ch
        self.stages = nn.ModuleList(stages)
        he_init(self)

    @property
    def out_channels(self) -> list[int]:
        return list(self.cfg.stage_channels)

    def forward(self, x) -> FeaturePyramid:
        x = self.r_down(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(*feats)


def pyramid_sizes(h: int, w: int) -> list[tuple[int, int]]:
    return [(h // 4 // 2**i, w // 4 // 2**i) for i in range(4)]

