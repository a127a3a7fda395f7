"""Feature fusion: bottom-up GL-FF path to the segmentation map, Sobel/MLFA path to the edge map."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from . import core
from .backbone import FeaturePyramid, he_init
from .config import FusionConfig

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.t().contiguous()


class PredictionMaps(NamedTuple):
    s_seg: torch.Tensor
    s_edge: torch.Tensor


class ConvBNAct(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, padding_mode: str = "zeros"):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, bias=False)
        self.bn = nn.BatchNorm2d(out_ch)
        self.padding_mode = padding_mode

    def forward(self, x):
        x = core.conv2d(x, self.conv.weight, None, padding=self.conv.padding[0], padding_mode=self.padding_mode)
        return core.activation(self.bn(x), "relu")


class GLFF(nn.Module):
    """Upsample the deeper map 2x, concatenate with the shallower one, then 1x1 and 3x3 convs."""

    def __init__(self, deep_channels: int, shallow_channels: int, out_channels: int):
        super().__init__()
        self.deep_channels = deep_channels
        self.fuse1 = ConvBNAct(deep_channels + shallow_channels, out_channels, 1)
        self.fuse3 = ConvBNAct(out_channels, out_channels, 3)

    def forward(self, f_deep, f_shallow):
        hd, wd = f_deep.shape[2:]
        hs, ws = f_shallow.shape[2:]
        if (2 * hd, 2 * wd) != (hs, ws):
            raise core.DimensionError(
                "glff_fuse", "spatial", f"deep map {hd}x{wd} is not half of shallow map {hs}x{ws}"
            )
        x = core.concat_channels([core.bilinear_upsample(f_deep, 2), f_shallow])
        return self.fuse3(self.fuse1(x))


class SegmentationHead(nn.Module):
    """3x3 conv, activation, 1x1 conv to one channel, 4x bilinear upsample, sigmoid."""

    def __init__(self, in_channels: int, hidden: int):
        super().__init__()
        self.conv3 = nn.Conv2d(in_channels, hidden, 3, padding=1)
        self.conv1 = nn.Conv2d(hidden, 1, 1)

    def logits(self, g1):
        x = core.activation(core.conv2d(g1, self.conv3.weight, self.conv3.bias, padding=1), "relu")
        x = core.conv2d(x, self.conv1.weight, self.conv1.bias)
        return core.bilinear_upsample(x, 4)

    def forward(self, g1):
        return core.sigmoid(self.logits(g1))


class SobelConv(nn.Module):
    """Fixed depthwise Sobel magnitude per channel followed by a learned 1x1 remap.

    Borders are replicate-padded so constant maps give zero response
    everywhere (``sqrt(eps)`` after the magnitude guard). The remap is
    batch-normalized: raw magnitudes of transformer features are large enough
    to saturate the edge sigmoid at initialization otherwise.
    """

    def __init__(self, in_channels: int, out_channels: int, eps: float = 1e-6):
        super().__init__()
        self.in_channels = in_channels
        self.eps = eps
        self.register_buffer("kx", SOBEL_X.expand(in_channels, 1, 3, 3).clone(), persistent=False)
        self.register_buffer("ky", SOBEL_Y.expand(in_channels, 1, 3, 3).clone(), persistent=False)
        self.remap = nn.Conv2d(in_channels, out_channels, 1)
        self.bn = nn.BatchNorm2d(out_channels)

    def gradients(self, f):
        c = self.in_channels
        gx = core.conv2d(f, self.kx.to(f.dtype), None, padding=1, groups=c, padding_mode="replicate")
        gy = core.conv2d(f, self.ky.to(f.dtype), None, padding=1, groups=c, padding_mode="replicate")
        return gx, gy

    def magnitude(self, f):
        gx, gy = self.gradients(f)
        return torch.sqrt(gx * gx + gy * gy + self.eps)

    def forward(self, f):
        return self.bn(core.conv2d(self.magnitude(f), self.remap.weight, self.remap.bias))


class MLFA(nn.Module):
    """Multi-level edge aggregation from the deepest level down to scale 1.

    ``a = e4``; three times ``a = conv3x3(up2(a) + e_{i-1})``. The maps
    ``e4, a3, a2, a1`` are resized to scale 1, concatenated and projected to
    one channel; the sigmoid output stays at quarter input resolution.
    """

    def __init__(self, in_channels: list[int], edge_channels: int):
        super().__init__()
        self.sobel = nn.ModuleList(SobelConv(c, edge_channels) for c in in_channels)
        self.aggregate = nn.ModuleList(ConvBNAct(edge_channels, edge_channels, 3, "replicate") for _ in range(3))
        self.out = nn.Conv2d(4 * edge_channels, 1, 1)

    def logits(self, pyramid: FeaturePyramid):
        e = [s(f) for s, f in zip(self.sobel, pyramid)]
        a = e[3]
        collected = [a]
        for k, i in enumerate((2, 1, 0)):
            a = self.aggregate[k](core.add(core.bilinear_upsample(a, 2), e[i]))
            collected.append(a)
        size = tuple(e[0].shape[2:])
        x = core.concat_channels([core.resize_bilinear(c, size) for c in collected])
        return core.conv2d(x, self.out.weight, self.out.bias)

    def forward(self, pyramid: FeaturePyramid):
        return core.sigmoid(self.logits(pyramid))


class Fusion(nn.Module):
    def __init__(self, cfg: FusionConfig, in_channels: list[int]):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c1, c2, c3 = cfg.fuse_channels
        d1, d2, d3, d4 = in_channels
        self.glff3 = GLFF(d4, d3, c3)
        self.glff2 = GLFF(c3, d2, c2)
        self.glff1 = GLFF(c2, d1, c1)
        self.seg_head = SegmentationHead(c1, cfg.head_channels)
        self.mlfa = MLFA(in_channels, cfg.edge_channels)
        he_init(self)
        # probability outputs start near 0.5
        for conv in (self.seg_head.conv1, self.mlfa.out):
            nn.init.normal_(conv.weight, 0.0, 0.01)

    def bottom_up(self, pyramid: FeaturePyramid):
        g3 = self.glff3(pyramid.f4, pyramid.f3)
        g2 = self.glff2(g3, pyramid.f2)
        return self.glff1(g2, pyramid.f1)

    def forward(self, pyramid: FeaturePyramid) -> PredictionMaps:
        s_seg = self.seg_head(self.bottom_up(pyramid))
        s_edge = self.mlfa(pyramid)
        return PredictionMaps(s_seg, s_edge)
