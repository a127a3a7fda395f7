"""Binary checkpoint format.

Layout (little-endian)::

    b"MSMG"  u32 version
    u32 len, ascii config fingerprint (sha256 hex)
    u32 len, utf-8 JSON of the model config
    u64 step
    u32 tensor count
    repeated: u32 name len, name bytes, u32 rank, u32 dims[rank], f32 payload

Optimizer moments are stored as ordinary tensors named ``optim.m.<param>``
and ``optim.v.<param>``.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..config import ModelConfig, from_dict, to_dict
from .optim import AdamState

MAGIC = b"MSMG"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    version: int
    fingerprint: str
    model_config: dict
    step: int
    tensors: "OrderedDict[str, np.ndarray]"

    def config(self) -> ModelConfig:
        return from_dict(ModelConfig, self.model_config)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, model, state: AdamState | None = None, step: int = 0) -> None:
    cfg: ModelConfig = model.cfg
    tensors: OrderedDict[str, torch.Tensor] = OrderedDict(model.state_dict())
    if state is not None:
        names = [n for n, _ in model.named_parameters()]
        for name, m, v in zip(names, state.m, state.v):
            tensors[f"optim.m.{name}"] = m
            tensors[f"optim.v.{name}"] = v
    parts = [MAGIC, struct.pack("<I", VERSION), _pack_str(cfg.fingerprint())]
    parts.append(_pack_str(json.dumps(to_dict(cfg), sort_keys=True)))
    parts.append(struct.pack("<QI", step, len(tensors)))
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an MSMG checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    fingerprint = r.string()
    model_config = json.loads(r.string())
    step, count = r.unpack("<QI")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        name = r.string()
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).copy()
        tensors[name] = arr
    return Checkpoint(version, fingerprint, model_config, step, tensors)


def apply_checkpoint(model, ckpt: Checkpoint, force_partial: bool = False) -> list[str]:
    """Copy checkpoint tensors into ``model``; returns the names that were loaded.

    A fingerprint mismatch is an error unless ``force_partial``, in which case
    only tensors whose name and shape both match are copied.
    """
    if ckpt.fingerprint != model.cfg.fingerprint() and not force_partial:
        raise CheckpointError("checkpoint config fingerprint does not match the model (use force_partial)")
    own = model.state_dict()
    loaded = []
    with torch.no_grad():
        for name, target in own.items():
            arr = ckpt.tensors.get(name)
            if arr is None or tuple(arr.shape) != tuple(target.shape):
                if not force_partial:
                    raise CheckpointError(f"checkpoint tensor missing or mis-shaped: {name}")
                continue
            target.copy_(torch.from_numpy(arr).to(target.dtype))
            loaded.append(name)
    return loaded


def restore_adam_state(model, ckpt: Checkpoint) -> AdamState | None:
    names = [n for n, _ in model.named_parameters()]
    if not all(f"optim.m.{n}" in ckpt.tensors for n in names):
        return None
    m = [torch.from_numpy(ckpt.tensors[f"optim.m.{n}"].copy()) for n in names]
    v = [torch.from_numpy(ckpt.tensors[f"optim.v.{n}"].copy()) for n in names]
    return AdamState(ckpt.step, m, v)


def load_model(path, force_partial: bool = False):
    """Rebuild the model described by a checkpoint and load its weights."""
    from ..model import MSMGNet

    ckpt = load_checkpoint(path)
    model = MSMGNet(ckpt.config())
    apply_checkpoint(model, ckpt, force_partial)
    model.eval()
    return model, ckpt
