"""Finite-difference gradient suite over every op and block at toy size in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch
from torch.func import functional_call

from . import core
from .backbone import Backbone, RDown
from .config import BackboneConfig, FusionConfig, GrainedConfig, ModelConfig
from .fusion import GLFF, MLFA, SegmentationHead, SobelConv
from .grained import MultiGrained, PatchEmbed, TransformerBlock
from .model import MSMGNet
from .objective import dice_loss

OP_TOL = 1e-4
END_TO_END_TOL = 1e-3


@dataclass
class GradResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _weights_like(t: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    return torch.randn(t.shape, generator=gen, dtype=t.dtype)


def module_check(
    module: torch.nn.Module,
    inputs: list[torch.Tensor],
    reduce: Callable | None = None,
    directions: int | None = 12,
    seed: int = 0,
    eps: float = 1e-6,
) -> float:
    """Check gradients w.r.t. both the inputs and every trainable parameter.

    The module output (or each tensor of a tuple output) is contracted with
    fixed random weights to get a scalar.
    """
    module = module.double()
    names = [n for n, p in module.named_parameters() if p.requires_grad]
    params = [p.detach() for n, p in module.named_parameters() if p.requires_grad]
    n_in = len(inputs)
    gen = torch.Generator().manual_seed(seed + 1)
    probe: list[torch.Tensor] = []

    def f(*args):
        xs, ps = args[:n_in], args[n_in:]
        out = functional_call(module, dict(zip(names, ps)), tuple(xs))
        outs = list(out) if isinstance(out, tuple) else [out]
        if reduce is not None:
            return reduce(*outs)
        if not probe:
            probe.extend(_weights_like(o, gen) for o in outs)
        return sum((o * w).sum() for o, w in zip(outs, probe))

    return core.finite_diff_check(f, list(inputs) + params, eps=eps, directions=directions, seed=seed)


def _rand(gen, *shape):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def toy_model_config(input_size: int = 64) -> ModelConfig:
    return ModelConfig(
        input_size=input_size,
        backbone=BackboneConfig(stem_channels=4, stage_channels=[4, 8, 8, 16], blocks_per_stage=[1, 1, 1, 1]),
        grained=GrainedConfig(
            embed_dims=[8, 8, 8, 8],
            heads=[2, 2, 2, 2],
            shunt_ratios=[[2, 1], [2, 1], [1], [1]],
            blocks=1,
            mlp_ratio=2,
        ),
        fusion=FusionConfig(fuse_channels=[8, 8, 8], edge_channels=4, head_channels=8),
    )


def op_checks(seed: int = 0) -> list[GradResult]:
    gen = torch.Generator().manual_seed(seed)
    out: list[GradResult] = []

    def add(name, fn, *xs, directions=None):
        w = _weights_like(fn(*xs), gen)
        err = core.finite_diff_check(lambda *a: (fn(*a) * w).sum(), list(xs), directions=directions, seed=seed)
        out.append(GradResult(name, err, OP_TOL))

    add("conv2d", lambda x, k, b: core.conv2d(x, k, b, stride=2, padding=1),
        _rand(gen, 2, 3, 8, 8), _rand(gen, 4, 3, 3, 3), _rand(gen, 4))
    add("conv2d_grouped_replicate", lambda x, k: core.conv2d(x, k, None, padding=1, groups=3, padding_mode="replicate"),
        _rand(gen, 1, 3, 5, 5), _rand(gen, 3, 1, 3, 3))
    add("max_pool2d", lambda x: core.max_pool2d(x, 2, 2), _rand(gen, 1, 2, 6, 6))
    add("linear", core.linear, _rand(gen, 3, 4), _rand(gen, 4, 5), _rand(gen, 5))
    add("layer_norm", core.layer_norm, _rand(gen, 3, 6), _rand(gen, 6), _rand(gen, 6))
    add("softmax", lambda x: core.softmax(x, -1), _rand(gen, 3, 5))
    add("gelu", core.gelu, _rand(gen, 4, 5))
    add("relu", lambda x: core.activation(x, "relu"), _rand(gen, 4, 5))
    add("sigmoid", core.sigmoid, _rand(gen, 4, 5))
    add("bilinear_upsample", lambda x: core.bilinear_upsample(x, 2), _rand(gen, 1, 2, 3, 4))
    add("flatten_spatial", core.flatten_spatial, _rand(gen, 2, 3, 2, 4))
    add("concat_channels", lambda a, b: core.concat_channels([a, b]), _rand(gen, 1, 2, 3, 3), _rand(gen, 1, 1, 3, 3))
    target = (torch.rand(2, 1, 4, 4, generator=gen) > 0.5).double()
    pred = torch.rand(2, 1, 4, 4, generator=gen, dtype=torch.float64) * 0.8 + 0.1
    out.append(GradResult("dice_loss", core.finite_diff_check(lambda p: dice_loss(p, target), pred), OP_TOL))
    return out


def block_checks(seed: int = 0) -> list[GradResult]:
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    cfg = toy_model_config()
    res: list[GradResult] = []

    def add(name, module, *xs, tol=OP_TOL, **kw):
        res.append(GradResult(name, module_check(module, list(xs), seed=seed, **kw), tol))

    add("r_down", RDown(4), _rand(gen, 2, 3, 32, 32))
    bb = Backbone(cfg.backbone).double()
    add("resnet_stage", bb.stages[1], _rand(gen, 2, 4, 8, 8))
    add("backbone", bb, _rand(gen, 2, 3, 64, 64))
    add("patch_embed", PatchEmbed(4, 8), _rand(gen, 2, 4, 4, 4))

    class _Tokens(torch.nn.Module):
        def __init__(self, block, grid):
            super().__init__()
            self.block, self.grid = block, grid

        def forward(self, t):
            return self.block(t, self.grid)

    add("shunted_transformer_block", _Tokens(TransformerBlock(8, 2, [2, 1], 2, True), (4, 4)), _rand(gen, 2, 16, 8))
    mg = MultiGrained(cfg.grained, cfg.backbone.stage_channels, cfg.input_size)
    with torch.no_grad():
        for p in mg.parameters():
            if p.dim() == 3:  # positional embeddings start at zero; make them matter
                p.normal_(0, 0.1)

    class _Pyr(torch.nn.Module):
        def __init__(self, inner):
            super().__init__()
            self.inner = inner

        def forward(self, a, b, c, d):
            return tuple(self.inner((a, b, c, d)))

    pyr_in = [_rand(gen, 2, c, 16 // 2**i, 16 // 2**i) for i, c in enumerate(cfg.backbone.stage_channels)]
    add("multi_grained", _Pyr(mg), *pyr_in)
    add("glff", GLFF(8, 6, 8), _rand(gen, 2, 8, 4, 4), _rand(gen, 2, 6, 8, 8))
    add("segmentation_head", SegmentationHead(8, 8), _rand(gen, 2, 8, 4, 4))
    add("sobel_conv", SobelConv(3, 4), _rand(gen, 2, 3, 6, 6))
    feats = [_rand(gen, 2, 8, 16 // 2**i, 16 // 2**i) for i in range(4)]

    class _Mlfa(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.inner = MLFA([8, 8, 8, 8], 4)

        def forward(self, a, b, c, d):
            return self.inner((a, b, c, d))

    add("mlfa", _Mlfa(), *feats)
    return res


def end_to_end_checks(seed: int = 0, model_cfg: ModelConfig | None = None) -> list[GradResult]:
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    cfg = model_cfg or toy_model_config()
    model = MSMGNet(cfg).double()
    size = cfg.input_size
    x = _rand(gen, 2, 3, size, size)
    mask = (torch.rand(2, 1, size, size, generator=gen) > 0.7).double()
    edge = (torch.rand(2, 1, size // 4, size // 4, generator=gen) > 0.7).double()

    def loss(s_seg, s_edge):
        return 0.75 * dice_loss(s_seg, mask) + 0.25 * dice_loss(s_edge, edge)

    return [
        GradResult("end_to_end_heads", module_check(model, [x], seed=seed), END_TO_END_TOL),
        GradResult("end_to_end_loss", module_check(model, [x], reduce=loss, seed=seed), END_TO_END_TOL),
    ]


def run_suite(seed: int = 0, model_cfg: ModelConfig | None = None) -> list[GradResult]:
    return op_checks(seed) + block_checks(seed) + end_to_end_checks(seed, model_cfg)
