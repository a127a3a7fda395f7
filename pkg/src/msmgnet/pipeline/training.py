"""Training loop and evaluation orchestration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import core
from ..config import LossWeights, RunConfig, save_run_config
from ..model import MSMGNet
from ..objective import (
    combined_loss,
    confusion,
    f1_from_counts,
    image_score,
    nanmean_optional,
    pixel_auc,
    pixel_f1,
)
from .checkpoint import apply_checkpoint, load_checkpoint, restore_adam_state, save_checkpoint
from .data import SampleRecord, augment, collate, load_samples
from .optim import AdamState, adam_step, init_adam_state, lr_at

log = logging.getLogger(__name__)


@dataclass
class EvalResult:
    rows: list[dict]
    f1_mean: float | None
    auc_mean: float | None
    score_mean: float | None
    edge_f1_mean: float | None
    pooled_f1: float | None = None
    pooled_auc: float | None = None

    def summary(self) -> dict:
        return {
            "n_images": len(self.rows),
            "f1_mean": self.f1_mean,
            "auc_mean": self.auc_mean,
            "score_mean": self.score_mean,
            "edge_f1_mean": self.edge_f1_mean,
            "pooled_f1": self.pooled_f1,
            "pooled_auc": self.pooled_auc,
        }


@dataclass
class TrainResult:
    model: MSMGNet
    state: AdamState
    history: list[dict] = field(default_factory=list)
    step: int = 0


def evaluate(
    model: MSMGNet, samples: list[SampleRecord], batch_size: int = 4, threshold: float = 0.5, pooled: bool = False
) -> EvalResult:
    """Per-image F1 / AUC / image score (plus edge-head F1) and their means.

    Single-class masks give a missing AUC that is left out of the mean. With
    ``pooled`` the pixels of all images are also scored as one set.
    """
    rows = []
    seg_all, gt_all = [], []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        x, _, _ = collate(chunk)
        out = model.predict(x)
        for k, s in enumerate(chunk):
            seg = out.s_seg[k].numpy()
            edge = out.s_edge[k].numpy()
            rows.append(
                {
                    "id": s.id,
                    "f1": pixel_f1(seg, s.mask, threshold),
                    "auc": pixel_auc(seg, s.mask),
                    "score": image_score(seg),
                    "edge_f1": pixel_f1(edge, s.edge, threshold),
                }
            )
            if pooled:
                seg_all.append(seg.ravel())
                gt_all.append(s.mask.ravel())
    result = EvalResult(
        rows,
        nanmean_optional(r["f1"] for r in rows),
        nanmean_optional(r["auc"] for r in rows),
        nanmean_optional(r["score"] for r in rows),
        nanmean_optional(r["edge_f1"] for r in rows),
    )
    if pooled and rows:
        seg_cat, gt_cat = np.concatenate(seg_all), np.concatenate(gt_all)
        tp, fp, fn, _ = confusion(seg_cat, gt_cat, threshold)
        result.pooled_f1 = f1_from_counts(tp, fp, fn)
        result.pooled_auc = pixel_auc(seg_cat, gt_cat)
    return result


def _fmt(v) -> str:
    return "nan" if v is None else f"{v:.6f}"


def write_eval(result: EvalResult, out_dir: str | Path) -> None:
    """Write ``per_image.tsv`` and ``aggregate.tsv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["id\tf1\tauc\tscore\tedge_f1"]
    for r in result.rows:
        lines.append(f"{r['id']}\t{_fmt(r['f1'])}\t{_fmt(r['auc'])}\t{_fmt(r['score'])}\t{_fmt(r['edge_f1'])}")
    (out_dir / "per_image.tsv").write_text("\n".join(lines) + "\n")
    agg = ["metric\tvalue"] + [
        f"{k}\t{v if isinstance(v, int) else _fmt(v)}" for k, v in result.summary().items()
    ]
    (out_dir / "aggregate.tsv").write_text("\n".join(agg) + "\n")


def effective_weights(cfg: RunConfig) -> LossWeights:
    if not cfg.train.edge_loss:
        return LossWeights(1.0, 0.0)
    return cfg.train.loss


def build_model(cfg: RunConfig) -> MSMGNet:
    torch.manual_seed(cfg.train.seed)
    return MSMGNet(cfg.model)


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    rng = np.random.default_rng([seed, step, 0])
    return rng.choice(n, size=min(batch_size, n), replace=False)


def train(
    data,
    cfg: RunConfig,
    out_dir: str | Path | None = None,
    val_samples: list[SampleRecord] | None = None,
    resume: str | Path | None = None,
    model: MSMGNet | None = None,
) -> TrainResult:
    """Train end to end with Adam on the combined Dice objective.

    ``data`` is a manifest path or a list of samples. Batch composition and
    augmentation are seeded per step from ``cfg.train.seed``, so a run is
    reproducible and a resumed run continues the same stream. With
    ``out_dir`` the resolved config, a JSON-lines metrics log and checkpoints
    (``last.ckpt`` and optional periodic ones) are written there.
    """
    cfg.validate()
    tc = cfg.train
    samples = data if isinstance(data, list) else load_samples(data, cfg.model.input_size, tc.edge_width)
    if not samples:
        raise ValueError("no training samples")
    model = model or build_model(cfg)
    params = [p for _, p in model.named_parameters()]
    state = init_adam_state(params)
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        apply_checkpoint(model, ckpt)
        restored = restore_adam_state(model, ckpt)
        state = restored if restored is not None else state
        start = ckpt.step
    weights = effective_weights(cfg)

    metrics_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_run_config(cfg, out_dir / "config.json")
        metrics_file = open(out_dir / "metrics.jsonl", "a" if resume else "w")

    history = []
    try:
        for step in range(start, tc.max_steps):
            idx = _batch_indices(len(samples), tc.batch_size, tc.seed, step)
            rng = np.random.default_rng([tc.seed, step, 1])
            batch = [augment(samples[i], tc.augment, rng) for i in idx]
            x, y, e = collate(batch)
            lr = lr_at(step, tc.max_steps, tc)

            model.train()
            for p in params:
                p.grad = None
            out = model(x)
            total, terms = combined_loss(out.s_seg, out.s_edge, y, e, weights, tc.dice_smooth)
            core.check_finite(terms["seg"], "loss_seg", step)
            core.check_finite(terms["edge"], "loss_edge", step)
            core.backward(total)
            for name, p in model.named_parameters():
                if p.grad is not None:
                    core.check_finite(p.grad, f"{name}.grad", step)
            adam_step(params, [p.grad for p in params], state, lr)

            record = {
                "step": step,
                "lr": lr,
                "loss": total.item(),
                "loss_seg": terms["seg"].item(),
                "loss_edge": terms["edge"].item(),
            }
            history.append(record)
            if metrics_file and (step % tc.log_every == 0 or step == tc.max_steps - 1):
                metrics_file.write(json.dumps(record) + "\n")
            if tc.eval_every and val_samples and (step + 1) % tc.eval_every == 0:
                ev = evaluate(model, val_samples)
                val = {"step": step, "split": "val", **ev.summary()}
                history.append(val)
                if metrics_file:
                    metrics_file.write(json.dumps(val) + "\n")
                log.info("step %d val f1 %.4f", step, ev.f1_mean or 0.0)
            if out_dir is not None and tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
                save_checkpoint(out_dir / f"step{step + 1:06d}.ckpt", model, state, step + 1)
    finally:
        if metrics_file:
            metrics_file.close()

    final_step = max(start, tc.max_steps)
    if out_dir is not None:
        save_checkpoint(out_dir / "last.ckpt", model, state, final_step)
    model.eval()
    return TrainResult(model, state, history, final_step)
