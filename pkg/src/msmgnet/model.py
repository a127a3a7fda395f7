"""The assembled network: backbone -> per-scale grained branches -> fusion heads."""

from __future__ import annotations

import torch
from torch import nn

from .backbone import Backbone, FeaturePyramid, InputSizeError, check_input_size
from .config import ModelConfig
from .fusion import Fusion, PredictionMaps
from .grained import MultiGrained, ScaleBranch


class MSMGNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone)
        self.grained = MultiGrained(cfg.grained, self.backbone.out_channels, cfg.input_size)
        self.fusion = Fusion(cfg.fusion, self.grained.out_channels)

    def features(self, x) -> tuple[FeaturePyramid, FeaturePyramid]:
        check_input_size(x)
        if tuple(x.shape[2:]) != (self.cfg.input_size, self.cfg.input_size):
            raise InputSizeError(
                f"model built for {self.cfg.input_size}x{self.cfg.input_size} input, got {x.shape[2]}x{x.shape[3]}"
            )
        pyramid = self.backbone(x)
        return pyramid, self.grained(pyramid)

    def forward(self, x) -> PredictionMaps:
        _, grained = self.features(x)
        return self.fusion(grained)

    def record_attention(self, on: bool = True) -> None:
        for branch in self.grained.branches:
            if isinstance(branch, ScaleBranch):
                for blk in branch.blocks:
                    blk.attn.record = on

    @torch.no_grad()
    def predict(self, x) -> PredictionMaps:
        was_training = self.training
        self.eval()
        try:
            return self(x)
        finally:
            self.train(was_training)
