"""Adam update and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..config import TrainConfig


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Learning rate at ``step`` of ``total_steps``; non-increasing, exact at both ends.

    ``cosine`` anneals smoothly from ``lr_start`` to ``lr_end``. ``step``
    decays geometrically in ``decay_periods`` equal plateaus, reaching
    ``lr_end`` at the final step.
    """
    if step <= 0 or total_steps <= 0:
        return cfg.lr_start
    if step >= total_steps:
        return cfg.lr_end
    frac = step / total_steps
    if cfg.schedule == "cosine":
        lr = cfg.lr_end + (cfg.lr_start - cfg.lr_end) * 0.5 * (1.0 + math.cos(math.pi * frac))
    else:
        k = math.floor(frac * cfg.decay_periods)
        lr = cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (k / cfg.decay_periods)
    return min(cfg.lr_start, max(cfg.lr_end, lr))


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


def init_adam_state(params) -> AdamState:
    params = list(params)
    return AdamState(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


@torch.no_grad()
def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    A ``None`` gradient is treated as zero.
    """
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        denom = (v / c2).sqrt_().add_(eps)
        p.addcdiv_(m, denom, value=-lr / c1)
