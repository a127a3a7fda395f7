"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the pytest terminal summary. Run on their own with
``pytest tests/test_acceptance.py``.
"""

import itertools
import time

import numpy as np
import pytest
import torch
from PIL import Image

from msmgnet.cli import main as cli_main
from msmgnet.config import AugmentConfig, ModelConfig, RunConfig, TrainConfig
from msmgnet.fusion import SobelConv
from msmgnet.gradcheck import END_TO_END_TOL, OP_TOL, run_suite
from msmgnet.grained import ShuntedAttention
from msmgnet.model import MSMGNet
from msmgnet.objective import dice_loss, pixel_auc
from msmgnet.pipeline import (
    collate,
    evaluate,
    load_model,
    make_synthetic_samples,
    save_checkpoint,
    train,
)
from msmgnet.robustness import PerturbationSpec, gaussian_blur, gaussian_noise, iso_noise, robustness_sweep

OVERFIT_STEPS = 600  # the budget allows up to 2000


def overfit_config(edge_loss: bool, steps: int = OVERFIT_STEPS) -> RunConfig:
    return RunConfig(
        model=ModelConfig.toy(64),  # channels 16..128, one block per scale, ratios [2,1]/[1]
        train=TrainConfig(
            batch_size=4,
            max_steps=steps,
            lr_start=1e-3,
            lr_end=1e-3,
            seed=0,
            edge_loss=edge_loss,
            augment=AugmentConfig.off(),
        ),
    )


@pytest.fixture(scope="module")
def overfit_data():
    return make_synthetic_samples(4, 64, seed=0)


@pytest.fixture(scope="module")
def overfit_runs(overfit_data):
    runs = {}
    for edge in (True, False):
        t0 = time.perf_counter()
        result = train(overfit_data, overfit_config(edge))
        runs[edge] = (result, evaluate(result.model, overfit_data), time.perf_counter() - t0)
    return runs


# 1


def test_gradient_integrity(criterion):
    t0 = time.perf_counter()
    results = run_suite(seed=0)
    elapsed = time.perf_counter() - t0
    names = {r.name for r in results}
    required = {"r_down", "resnet_stage", "shunted_transformer_block", "glff", "segmentation_head", "mlfa", "dice_loss"}
    tol_ok = all(r.tol == (END_TO_END_TOL if r.name.startswith("end_to_end") else OP_TOL) for r in results)
    worst_op = max(r.error for r in results if not r.name.startswith("end_to_end"))
    worst_e2e = max(r.error for r in results if r.name.startswith("end_to_end"))
    ok = required <= names and tol_ok and all(r.ok for r in results) and elapsed < 300
    criterion(
        1,
        "gradient integrity",
        ok,
        f"{len(results)} checks, worst op {worst_op:.2e} < 1e-4, worst end-to-end {worst_e2e:.2e} < 1e-3, {elapsed:.1f}s",
    )


# 2


def dense_mhsa(x, wq, bq, wk, bk, wv, bv, wp, bp, heads):
    """Textbook multi-head self-attention in float64 numpy."""
    n, d = x.shape
    hd = d // heads
    q, k, v = x @ wq.T + bq, x @ wk.T + bk, x @ wv.T + bv
    outs = []
    for h in range(heads):
        s = slice(h * hd, (h + 1) * hd)
        logits = q[:, s] @ k[:, s].T / np.sqrt(hd)
        a = np.exp(logits - logits.max(1, keepdims=True))
        outs.append((a / a.sum(1, keepdims=True)) @ v[:, s])
    return np.concatenate(outs, 1) @ wp.T + bp


def test_shunted_attention_oracle(criterion):
    worst = 0.0
    seeds = range(12)
    for seed in seeds:
        torch.manual_seed(seed)
        dim, heads = 16, 4
        attn = ShuntedAttention(dim, heads, [1], detail_enhance=False)
        for p in attn.parameters():
            torch.nn.init.normal_(p, 0, 0.3)
        x = torch.randn(2, 20, dim)
        got = attn(x, (4, 5)).detach().double().numpy()
        g = lambda t: t.detach().double().numpy()
        wkv, bkv = g(attn.kv[0].weight), g(attn.kv[0].bias)
        for b in range(2):
            want = dense_mhsa(
                x[b].double().numpy(),
                g(attn.q.weight), g(attn.q.bias),
                wkv[:dim], bkv[:dim], wkv[dim:], bkv[dim:],
                g(attn.proj.weight), g(attn.proj.bias),
                heads,
            )
            worst = max(worst, float(np.abs(got[b] - want).max()))
    criterion(2, "shunted attention equals dense attention at ratio 1", worst < 1e-5, f"{len(seeds)} seeds, max abs diff {worst:.2e}")


# 3


def test_shape_contract_512(criterion):
    torch.manual_seed(0)
    cfg = ModelConfig()  # defaults: 512x512 input with the standard shunt ratios
    out = MSMGNet(cfg).predict(torch.rand(1, 3, 512, 512))
    ok = (
        tuple(out.s_seg.shape) == (1, 1, 512, 512)
        and tuple(out.s_edge.shape) == (1, 1, 128, 128)
        and all(float(t.min()) >= 0 and float(t.max()) <= 1 for t in out)
    )
    criterion(3, "512x512 input gives 512x512 seg and 128x128 edge maps in [0,1]", ok,
              f"seg {tuple(out.s_seg.shape)}, edge {tuple(out.s_edge.shape)}")


# 4


def test_dice_oracle(criterion):
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    worst, cases = 0.0, 0
    for bits in itertools.product([0.0, 1.0], repeat=4):
        y = np.array(bits)
        for vals in itertools.product(grid, repeat=4):
            p = np.array(vals)
            pt = torch.tensor(p, dtype=torch.float64).reshape(1, 1, 2, 2)
            yt = torch.tensor(y, dtype=torch.float64).reshape(1, 1, 2, 2)
            inter, mass = float(sum(a * b for a, b in zip(p, y))), float(sum(p) + sum(y))
            if mass > 0:
                worst = max(worst, abs(dice_loss(pt, yt, smooth=0.0).item() - (1 - 2 * inter / mass)))
            worst = max(worst, abs(dice_loss(pt, yt, smooth=1.0).item() - (1 - (2 * inter + 1) / (mass + 1))))
            cases += 1
    z = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
    empty = dice_loss(z, z).item()
    criterion(4, "dice loss matches brute force on exhaustive 2x2 cases", worst <= 1e-12 and empty == 0.0,
              f"{cases} cases, max diff {worst:.1e}, empty/empty {empty}")


# 5


def test_auc_oracle(criterion):
    rng = np.random.default_rng(0)
    mismatches = 0
    n_cases = 100
    for _ in range(n_cases):
        n = int(rng.integers(2, 51))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding gives ties
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        if labels.all() or not labels.any():
            labels[0] = not labels[0]  # both classes must be present
        pos, neg = scores[labels], scores[~labels]
        wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
        if pixel_auc(scores, labels) != wins / (len(pos) * len(neg)):
            mismatches += 1
    criterion(5, "pixel AUC equals pairwise enumeration", mismatches == 0, f"{n_cases} cases, {mismatches} mismatches")


# 6


def test_overfit_sanity(criterion, overfit_runs, overfit_data):
    result, ev, elapsed = overfit_runs[True]
    first, last = result.history[0]["loss"], result.history[-1]["loss"]
    ok = ev.f1_mean >= 0.9 and last < first and elapsed < 20 * 60 and result.step <= 2000
    criterion(6, "overfit sanity on 4 synthetic images", ok,
              f"{result.step} steps in {elapsed:.0f}s, F1 {ev.f1_mean:.4f} >= 0.9, loss {first:.4f} -> {last:.4f}")


# 7


def test_edge_supervision_effect(criterion, overfit_runs):
    _, with_edge, _ = overfit_runs[True]
    _, without_edge, _ = overfit_runs[False]
    drop = without_edge.f1_mean - with_edge.f1_mean
    ok = drop <= 0.02 and with_edge.edge_f1_mean >= 0.5
    criterion(7, "edge loss costs at most 0.02 F1 and trains the edge head", ok,
              f"F1 {with_edge.f1_mean:.4f} vs {without_edge.f1_mean:.4f} without, edge F1 {with_edge.edge_f1_mean:.4f}")


# 8


def test_robustness_harness(criterion, overfit_runs, overfit_data):
    model = overfit_runs[True][0].model
    clean = evaluate(model, overfit_data).f1_mean
    rows = robustness_sweep(model, overfit_data, [PerturbationSpec("gaussian_blur", [1]), PerturbationSpec("jpeg", [100])])
    deltas = [abs(r.f1_mean - clean) for r in rows]
    impulse_err = 0.0
    for k in (3, 5, 7, 9):
        img = np.zeros((21, 21))
        img[10, 10] = 1.0
        impulse_err = max(impulse_err, abs(gaussian_blur(img, k).sum() - 1.0))
    img = np.full((32, 32, 3), 128.0)
    seeded = all(
        np.array_equal(op(img, v, np.random.default_rng(3)), op(img, v, np.random.default_rng(3)))
        for op, v in ((gaussian_noise, 5.0), (iso_noise, 0.1))
    )
    sweep_a = robustness_sweep(model, overfit_data, [PerturbationSpec("gaussian_noise", [9])], seed=1)
    sweep_b = robustness_sweep(model, overfit_data, [PerturbationSpec("gaussian_noise", [9])], seed=1)
    ok = max(deltas) <= 0.01 and impulse_err <= 1e-6 and seeded and sweep_a == sweep_b
    criterion(8, "identity grid points reproduce clean metrics", ok,
              f"blur1 dF1 {deltas[0]:.4f}, jpeg100 dF1 {deltas[1]:.4f}, impulse sum err {impulse_err:.1e}")


# 9


def test_sobel_analytic(criterion):
    sc = SobelConv(1, 1)
    const = torch.full((1, 1, 9, 9), 5.0, dtype=torch.float64)
    gx, gy = sc.gradients(const)
    zero_ok = bool((gx == 0).all() and (gy == 0).all() and (sc.magnitude(const) <= np.sqrt(sc.eps) + 1e-15).all())
    worst = 0.0
    for h in (0.5, 1.0, 3.0, 10.0):
        img = torch.zeros(1, 1, 8, 10, dtype=torch.float64)
        img[..., :5] = h
        mag = sc.magnitude(img)[0, 0]
        worst = max(worst, float((mag[:, 4:6] - 4 * h).abs().max() / (4 * h)))
        far = float(mag[:, [0, 1, 2, 7, 8, 9]].max())
        zero_ok &= far <= np.sqrt(sc.eps) + 1e-15
    criterion(9, "Sobel: constant maps give zero, a step of height h gives 4h", zero_ok and worst < 1e-6,
              f"max relative error at the step {worst:.1e} (sqrt(1e-6) magnitude guard)")


# 10


def test_reproducibility_and_persistence(criterion, overfit_runs, overfit_data, tmp_path):
    cfg = overfit_config(True, steps=15)
    cfg.train.augment = AugmentConfig()  # exercise the seeded augmentation stream too
    cfg.train.lr_end = 1e-5
    a = [h["loss"] for h in train(overfit_data, cfg).history]
    b = [h["loss"] for h in train(overfit_data, cfg).history]
    curves_ok = a == b

    result = overfit_runs[True][0]
    save_checkpoint(tmp_path / "m.ckpt", result.model, result.state, result.step)
    loaded, _ = load_model(tmp_path / "m.ckpt")
    ckpt_ok = all(torch.equal(x, y) for x, y in zip(result.model.state_dict().values(), loaded.state_dict().values()))
    x, y, e = collate(overfit_data)
    ckpt_ok &= torch.equal(result.model.predict(x).s_seg, loaded.predict(x).s_seg)

    img = tmp_path / "img.png"
    Image.fromarray((overfit_data[0].image.transpose(1, 2, 0) * 255).astype(np.uint8)).save(img)
    for run in ("p1", "p2"):
        assert cli_main(["predict", "--checkpoint", str(tmp_path / "m.ckpt"), "--image", str(img),
                         "--out-prefix", str(tmp_path / run)]) == 0
    predict_ok = all(
        (tmp_path / f"p1{s}").read_bytes() == (tmp_path / f"p2{s}").read_bytes()
        for s in ("_seg.png", "_edge.png", "_score.txt")
    )
    criterion(10, "same seed gives identical runs; checkpoints and predict are exact", curves_ok and ckpt_ok and predict_ok,
              f"loss curves equal {curves_ok}, checkpoint bitwise {ckpt_ok}, predict deterministic {predict_ok}")
