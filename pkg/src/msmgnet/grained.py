"""Per-scale multi-grained feature learning with shunted self-attention.

Each pyramid level runs through its own branch: patch embedding (1x1 then
3x3 conv), flattening plus a learned positional embedding, a stack of
pre-norm shunted transformer blocks, and unflattening back to the map. The
branches never exchange information.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from . import core
from .backbone import FeaturePyramid, InputSizeError
from .config import GrainedConfig


def _init_weights(m: nn.Module) -> None:
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)
    elif isinstance(m, nn.Conv2d):
        fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
        nn.init.normal_(m.weight, 0.0, math.sqrt(2.0 / fan_out))
        if m.bias is not None:
            nn.init.zeros_(m.bias)


class PatchEmbed(nn.Module):
    def __init__(self, in_channels: int, dim: int):
        super().__init__()
        self.proj1 = nn.Conv2d(in_channels, dim, 1)
        self.proj3 = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x):
        x = core.conv2d(x, self.proj1.weight, self.proj1.bias)
        return core.conv2d(x, self.proj3.weight, self.proj3.bias, padding=1)


class ShuntedAttention(nn.Module):
    """Multi-head attention whose head groups see keys/values merged at different ratios.

    Heads are split evenly into one group per ratio. A group with ratio ``r``
    projects K/V from tokens merged by an ``r x r`` stride-``r`` conv (plus
    LayerNorm); ``r == 1`` uses the tokens as they are. With
    ``detail_enhance`` a depthwise 3x3 conv of V over the merged grid is
    added to V.
    """

    def __init__(self, dim: int, heads: int, ratios=(1,), detail_enhance: bool = True):
        super().__init__()
        ratios = list(ratios)
        if heads % len(ratios) or dim % heads:
            raise ValueError(f"dim {dim}, heads {heads}, {len(ratios)} ratio groups are incompatible")
        self.dim = dim
        self.heads = heads
        self.ratios = ratios
        self.head_dim = dim // heads
        self.group_heads = heads // len(ratios)
        self.group_dim = dim // len(ratios)
        self.scale = self.head_dim**-0.5
        self.detail_enhance = detail_enhance
        self.q = nn.Linear(dim, dim)
        self.merge = nn.ModuleList()
        self.merge_norm = nn.ModuleList()
        self.kv = nn.ModuleList()
        self.local = nn.ModuleList()
        for r in ratios:
            if r > 1:
                self.merge.append(nn.Conv2d(dim, dim, r, stride=r))
                self.merge_norm.append(nn.LayerNorm(dim))
            else:
                self.merge.append(nn.Identity())
                self.merge_norm.append(nn.Identity())
            self.kv.append(nn.Linear(dim, 2 * self.group_dim))
            if detail_enhance:
                self.local.append(nn.Conv2d(self.group_dim, self.group_dim, 3, padding=1, groups=self.group_dim))
        self.proj = nn.Linear(dim, dim)
        self.record = False
        self.last_attn: list[torch.Tensor] = []
        self.last_heads: torch.Tensor | None = None

    def check_grid(self, grid) -> None:
        for r in self.ratios:
            if grid[0] % r or grid[1] % r:
                raise ValueError(f"shunt ratio {r} does not divide grid {grid[0]}x{grid[1]}")

    def forward(self, x, grid):
        n, length, d = x.shape
        h, w = grid
        if length != h * w:
            raise core.DimensionError("shunted_self_attention", "tokens", f"{length} tokens for a {h}x{w} grid")
        self.check_grid(grid)
        hd, gh = self.head_dim, self.group_heads
        q = self.q(x).reshape(n, length, self.heads, hd).transpose(1, 2)
        outs, attns = [], []
        for g, r in enumerate(self.ratios):
            if r > 1:
                merged = self.merge[g](core.unflatten_spatial(x, grid))
                src = self.merge_norm[g](core.flatten_spatial(merged))
            else:
                src = x
            mh, mw = h // r, w // r
            kv = self.kv[g](src).reshape(n, mh * mw, 2, gh, hd).permute(2, 0, 3, 1, 4)
            k, v = kv[0], kv[1]
            if self.detail_enhance:
                v_map = v.transpose(1, 2).reshape(n, mh * mw, self.group_dim)
                v_map = core.unflatten_spatial(v_map, (mh, mw))
                conv = self.local[g]
                v_loc = core.conv2d(v_map, conv.weight, conv.bias, padding=1, groups=self.group_dim)
                v = v + core.flatten_spatial(v_loc).reshape(n, mh * mw, gh, hd).transpose(1, 2)
            qg = q[:, g * gh : (g + 1) * gh]
            attn = core.softmax((qg @ k.transpose(-2, -1)) * self.scale, axis=-1)
            attns.append(attn)
            outs.append(attn @ v)
        heads = torch.cat(outs, dim=1)
        if self.record:
            self.last_attn = [a.detach() for a in attns]
            self.last_heads = heads.detach()
        out = heads.transpose(1, 2).reshape(n, length, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(core.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm residual block: ``t + Attn(LN(t))`` then ``t + MLP(LN(t))``."""

    def __init__(self, dim: int, heads: int, ratios=(1,), mlp_ratio: int = 4, detail_enhance: bool = True):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = ShuntedAttention(dim, heads, ratios, detail_enhance)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim)

    def zero_init_outputs(self) -> None:
        for lin in (self.attn.proj, self.mlp.fc2):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def forward(self, x, grid):
        x = x + self.attn(self.norm1(x), grid)
        return x + self.mlp(self.norm2(x))


class ScaleBranch(nn.Module):
    def __init__(
        self,
        in_channels: int,
        dim: int,
        heads: int,
        ratios,
        grid: tuple[int, int],
        blocks: int = 2,
        mlp_ratio: int = 4,
        detail_enhance: bool = True,
    ):
        super().__init__()
        self.grid = tuple(grid)
        self.patch_embed = PatchEmbed(in_channels, dim)
        self.pos_embed = nn.Parameter(torch.zeros(1, grid[0] * grid[1], dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, heads, ratios, mlp_ratio, detail_enhance) for _ in range(blocks)
        )
        for blk in self.blocks:
            blk.attn.check_grid(self.grid)

    def forward(self, f):
        grid = tuple(f.shape[2:])
        if grid != self.grid:
            raise InputSizeError(f"branch built for a {self.grid[0]}x{self.grid[1]} grid, got {grid[0]}x{grid[1]}")
        t = core.flatten_spatial(self.patch_embed(f)) + self.pos_embed
        for blk in self.blocks:
            t = blk(t, grid)
        return core.unflatten_spatial(t, grid)


class Projection(nn.Module):
    """Stand-in for a disabled branch: a 1x1 conv keeping the channel contract."""

    def __init__(self, in_channels: int, dim: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, dim, 1)

    def forward(self, f):
        return core.conv2d(f, self.proj.weight, self.proj.bias)


class MultiGrained(nn.Module):
    def __init__(self, cfg: GrainedConfig, in_channels: list[int], input_size: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        branches = []
        for i in range(4):
            side = input_size // (4 * 2**i)
            if cfg.enabled[i]:
                branches.append(
                    ScaleBranch(
                        in_channels[i],
                        cfg.embed_dims[i],
                        cfg.heads[i],
                        cfg.shunt_ratios[i],
                        (side, side),
                        cfg.blocks,
                        cfg.mlp_ratio,
                        cfg.detail_enhance,
                    )
                )
            else:
                branches.append(Projection(in_channels[i], cfg.embed_dims[i]))
        self.branches = nn.ModuleList(branches)
        self.apply(_init_weights)

    @property
    def out_channels(self) -> list[int]:
        return list(self.cfg.embed_dims)

    def forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        return FeaturePyramid(*(branch(f) for branch, f in zip(self.branches, pyramid)))
