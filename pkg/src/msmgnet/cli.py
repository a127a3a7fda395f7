"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import InputSizeError
from .config import ConfigError, load_run_config
from .core import NumericalError
from .objective import image_score
from .pipeline import (
    CheckpointError,
    DataError,
    evaluate,
    load_model,
    load_samples,
    train,
    write_eval,
)
from .pipeline.data import load_image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("msmgnet")


def _parse_overrides(items: list[str] | None) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _to_png(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)).save(path)


def _normalized(arr: np.ndarray) -> np.ndarray:
    lo, hi = float(arr.min()), float(arr.max())
    return np.zeros_like(arr) if hi - lo < 1e-12 else (arr - lo) / (hi - lo)


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    cfg = load_run_config(args.config, overrides)
    val = load_samples(args.val_manifest, cfg.model.input_size, cfg.train.edge_width) if args.val_manifest else None
    result = train(args.manifest, cfg, out_dir=args.out_dir, val_samples=val, resume=args.resume)
    last = next((h for h in reversed(result.history) if "loss" in h), None)
    if last:
        print(f"step {result.step}: loss {last['loss']:.6f} (seg {last['loss_seg']:.6f}, edge {last['loss_edge']:.6f})")
    print(f"checkpoint: {Path(args.out_dir) / 'last.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_model(args.checkpoint)
    edge_width = load_run_config(args.config).train.edge_width if args.config else 3
    samples = load_samples(args.manifest, model.cfg.input_size, edge_width)
    result = evaluate(model, samples, pooled=args.pooled)
    write_eval(result, args.out)
    for k, v in result.summary().items():
        print(f"{k}\t{v}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _ = load_model(args.checkpoint)
    image = load_image(Path(args.image), model.cfg.input_size)
    out = model.predict(torch.from_numpy(image)[None])
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    _to_png(out.s_seg[0, 0].numpy(), Path(f"{prefix}_seg.png"))
    _to_png(out.s_edge[0, 0].numpy(), Path(f"{prefix}_edge.png"))
    score = image_score(out.s_seg)
    Path(f"{prefix}_score.txt").write_text(f"{score:.6f}\n")
    print(f"score\t{score:.6f}")
    return EXIT_OK


def cmd_perturb_eval(args) -> int:
    from .robustness import PerturbationSpec, robustness_sweep, write_table

    model, _ = load_model(args.checkpoint)
    samples = load_samples(args.manifest, model.cfg.input_size)
    specs = [PerturbationSpec(k.strip()) for k in args.kinds.split(",") if k.strip()]
    rows = robustness_sweep(model, samples, specs, seed=args.seed)
    write_table(rows, args.out)
    print(Path(args.out).read_text(), end="")
    return EXIT_OK


def cmd_dump_features(args) -> int:
    model, _ = load_model(args.checkpoint)
    image = load_image(Path(args.image), model.cfg.input_size)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.record_attention(True)
    try:
        with torch.no_grad():
            _, grained = model.features(torch.from_numpy(image)[None])
            maps = model.fusion(grained)
    finally:
        model.record_attention(False)
    for i, (f, branch) in enumerate(zip(grained, model.grained.branches), 1):
        _to_png(_normalized(f[0].mean(0).numpy()), out_dir / f"scale{i}_mean.png")
        blocks = getattr(branch, "blocks", None)
        if blocks:
            heads = blocks[-1].attn.last_heads[0]
            h, w = f.shape[2:]
            for k in range(min(2, heads.shape[0])):
                resp = heads[k].mean(-1).reshape(h, w).numpy()
                _to_png(_normalized(resp), out_dir / f"scale{i}_head{k}.png")
    _to_png(maps.s_seg[0, 0].numpy(), out_dir / "seg_response.png")
    print(f"wrote feature maps to {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    model_cfg = load_run_config(args.config).model if args.config else None
    results = run_suite(args.seed, model_cfg)
    worst_ok = True
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.name:32s} {r.error:.3e}  (tol {r.tol:.0e})  {status}")
        worst_ok &= r.ok
    return EXIT_OK if worst_ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msmgnet", description="Image manipulation localization toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. train.max_steps=100")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-image and aggregate metrics")
    e.add_argument("--config")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--pooled", action="store_true", help="also score all pixels as one set")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="segmentation/edge maps and image score for one image")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out-prefix", required=True)
    pr.set_defaults(func=cmd_predict)

    pe = sub.add_parser("perturb-eval", help="robustness sweep over post-processing perturbations")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--manifest", required=True)
    pe.add_argument("--kinds", default="gaussian_blur,gaussian_noise,jpeg,iso_noise")
    pe.add_argument("--out", required=True)
    pe.add_argument("--seed", type=int, default=0)
    pe.set_defaults(func=cmd_perturb_eval)

    d = sub.add_parser("dump-features", help="write per-scale feature maps as PNGs")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_dump_features)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite (float64)")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, InputSizeError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
