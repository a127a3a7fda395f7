"""Differentiable tensor operations used by every block of the network.

Kernels and reverse-mode gradients come from torch autograd; this module pins
down the calling conventions (NCHW layout, D x E linear weights, half-pixel
bilinear sampling, first-occurrence max-pool routing) and validates shapes up
front so that mistakes surface as :class:`DimensionError` naming the axis.
``finite_diff_check`` is an independent central-difference oracle and does not
use autograd for the numerical side.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class DimensionError(ValueError):
    """Raised when an operand has an incompatible shape."""

    def __init__(self, op: str, axis: str, message: str):
        self.op = op
        self.axis = axis
        super().__init__(f"{op}: {axis}: {message}")


class NumericalError(RuntimeError):
    """Raised when a non-finite value shows up where it must not."""

    def __init__(self, name: str, step: int | None = None):
        self.name = name
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite values in '{name}'{where}")


def _require_rank(op: str, x: Tensor, rank: int, layout: str) -> None:
    if x.dim() != rank:
        raise DimensionError(op, "rank", f"expected {layout} ({rank} dims), got shape {tuple(x.shape)}")


def conv2d(
    input: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    padding_mode: str = "zeros",
) -> Tensor:
    """2-D cross-correlation on NCHW input with an OIKK weight.

    ``padding_mode`` is ``"zeros"`` or ``"replicate"``.
    """
    _require_rank("conv2d", input, 4, "NCHW")
    _require_rank("conv2d", weight, 4, "OIKK")
    n, c, h, w = input.shape
    o, i, kh, kw = weight.shape
    if groups < 1 or c % groups:
        raise DimensionError("conv2d", "channels", f"{c} input channels not divisible by groups={groups}")
    if i != c // groups:
        raise DimensionError("conv2d", "weight.in_channels", f"expected {c // groups}, got {i}")
    if o % groups:
        raise DimensionError("conv2d", "weight.out_channels", f"{o} not divisible by groups={groups}")
    if bias is not None and tuple(bias.shape) != (o,):
        raise DimensionError("conv2d", "bias", f"expected shape ({o},), got {tuple(bias.shape)}")
    if h + 2 * padding < kh:
        raise DimensionError("conv2d", "height", f"padded height {h + 2 * padding} smaller than kernel {kh}")
    if w + 2 * padding < kw:
        raise DimensionError("conv2d", "width", f"padded width {w + 2 * padding} smaller than kernel {kw}")
    if padding_mode == "replicate" and padding > 0:
        input = F.pad(input, (padding, padding, padding, padding), mode="replicate")
        padding = 0
    elif padding_mode not in ("zeros", "replicate"):
        raise ValueError(f"unknown padding_mode {padding_mode!r}")
    return F.conv2d(input, weight, bias, stride=stride, padding=padding, groups=groups)


def max_pool2d(input: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Max over ``kernel x kernel`` windows.

    Ties route the gradient to the first maximal element in row-major order.
    """
    _require_rank("max_pool2d", input, 4, "NCHW")
    stride = kernel if stride is None else stride
    if kernel > input.shape[2]:
        raise DimensionError("max_pool2d", "height", f"kernel {kernel} larger than height {input.shape[2]}")
    if kernel > input.shape[3]:
        raise DimensionError("max_pool2d", "width", f"kernel {kernel} larger than width {input.shape[3]}")
    return F.max_pool2d(input, kernel, stride)


def linear(input: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``input @ weight + bias`` with ``weight`` laid out as D x E."""
    if input.dim() < 1 or weight.dim() != 2:
        raise DimensionError("linear", "rank", "weight must be D x E")
    if input.shape[-1] != weight.shape[0]:
        raise DimensionError("linear", "D", f"input has {input.shape[-1]} features, weight expects {weight.shape[0]}")
    if bias is not None and tuple(bias.shape) != (weight.shape[1],):
        raise DimensionError("linear", "E", f"bias shape {tuple(bias.shape)} != ({weight.shape[1]},)")
    out = input @ weight
    return out if bias is None else out + bias


def layer_norm(input: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    d = input.shape[-1] if input.dim() else 0
    if d == 0:
        raise DimensionError("layer_norm", "D", "cannot normalize an empty last axis")
    if tuple(gain.shape) != (d,) or tuple(shift.shape) != (d,):
        raise DimensionError("layer_norm", "D", f"gain/shift must have shape ({d},)")
    return F.layer_norm(input, (d,), gain, shift, eps)


def softmax(input: Tensor, axis: int = -1) -> Tensor:
    shifted = input - input.amax(dim=axis, keepdim=True).detach()
    e = shifted.exp()
    return e / e.sum(dim=axis, keepdim=True)


def gelu(input: Tensor) -> Tensor:
    return F.gelu(input, approximate="tanh")


def activation(input: Tensor, kind: str = "relu") -> Tensor:
    if kind == "relu":
        return F.relu(input)
    if kind == "gelu":
        return gelu(input)
    raise ValueError(f"unknown activation {kind!r}")


def sigmoid(input: Tensor) -> Tensor:
    return torch.sigmoid(input)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError("add", "shape", f"{tuple(a.shape)} vs {tuple(b.shape)}")
    return a + b


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    ref = tensors[0]
    for t in tensors[1:]:
        if t.shape[0] != ref.shape[0]:
            raise DimensionError("concat_channels", "batch", f"{t.shape[0]} vs {ref.shape[0]}")
        if t.shape[2:] != ref.shape[2:]:
            raise DimensionError("concat_channels", "spatial", f"{tuple(t.shape[2:])} vs {tuple(ref.shape[2:])}")
    return torch.cat(list(tensors), dim=1)


def bilinear_upsample(input: Tensor, factor) -> Tensor:
    """Bilinear upsampling by an integer factor, half-pixel centers (align-corners off)."""
    if isinstance(factor, bool) or not float(factor).is_integer() or int(factor) < 1:
        raise ValueError(f"upsample factor must be a positive integer, got {factor!r}")
    _require_rank("bilinear_upsample", input, 4, "NCHW")
    factor = int(factor)
    if factor == 1:
        return input
    return F.interpolate(input, scale_factor=factor, mode="bilinear", align_corners=False)


def resize_bilinear(input: Tensor, size: tuple[int, int]) -> Tensor:
    _require_rank("resize_bilinear", input, 4, "NCHW")
    if tuple(input.shape[2:]) == tuple(size):
        return input
    return F.interpolate(input, size=size, mode="bilinear", align_corners=False)


def flatten_spatial(input: Tensor) -> Tensor:
    """N x C x H x W -> N x (H*W) x C."""
    _require_rank("flatten_spatial", input, 4, "NCHW")
    return input.flatten(2).transpose(1, 2)


def unflatten_spatial(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """N x (H*W) x C -> N x C x H x W."""
    _require_rank("unflatten_spatial", tokens, 3, "N x L x C")
    h, w = grid
    if tokens.shape[1] != h * w:
        raise DimensionError("unflatten_spatial", "tokens", f"{tokens.shape[1]} tokens cannot fill a {h}x{w} grid")
    return tokens.transpose(1, 2).reshape(tokens.shape[0], tokens.shape[2], h, w)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable ``param.grad``."""
    if loss.numel() != 1:
        raise DimensionError("backward", "loss", f"loss must be a scalar, got shape {tuple(loss.shape)}")
    loss.reshape(()).backward()


def check_finite(t: Tensor, name: str, step: int | None = None) -> None:
    if not torch.isfinite(t).all():
        raise NumericalError(name, step)


def relative_error(analytic, numeric, guard: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), guard)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_diff_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-6,
    directions: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between autograd and central differences.

    ``f`` maps the input tensors to a scalar tensor. With ``directions=None``
    every coordinate of every input is perturbed in turn; otherwise that many
    random unit directions are probed jointly over all inputs and the
    directional derivatives are compared (cheaper for large inputs and
    insensitive to individually tiny gradient entries).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    xs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = f(*xs)
    if out.numel() != 1:
        raise DimensionError("finite_diff_check", "output", "f must return a scalar")
    grads = torch.autograd.grad(out.reshape(()), xs, allow_unused=True)
    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(xs, grads)]

    base = [x.detach().clone() for x in xs]

    def value(points) -> float:
        with torch.no_grad():
            return float(f(*points))

    if directions is None:
        analytic, numeric = [], []
        for k, x0 in enumerate(base):
            flat = x0.reshape(-1)
            for idx in range(flat.numel()):
                plus = [b.clone() for b in base]
                minus = [b.clone() for b in base]
                plus[k].view(-1)[idx] += eps
                minus[k].view(-1)[idx] -= eps
                numeric.append((value(plus) - value(minus)) / (2 * eps))
                analytic.append(float(grads[k].reshape(-1)[idx]))
        return relative_error(analytic, numeric)

    gen = torch.Generator().manual_seed(seed)
    analytic, numeric = [], []
    for _ in range(directions):
        vs = [torch.randn(b.shape, generator=gen, dtype=b.dtype) for b in base]
        norm = math.sqrt(sum(float((v * v).sum()) for v in vs))
        vs = [v / norm for v in vs]
        plus = [b + eps * v for b, v in zip(base, vs)]
        minus = [b - eps * v for b, v in zip(base, vs)]
        numeric.append((value(plus) - value(minus)) / (2 * eps))
        analytic.append(sum(float((g * v).sum()) for g, v in zip(grads, vs)))
    return relative_error(analytic, numeric)
