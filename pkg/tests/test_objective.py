import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from msmgnet.config import ConfigError, LossWeights
from msmgnet.core import DimensionError, finite_diff_check
from msmgnet.objective import (
    combined_loss,
    dice_loss,
    image_score,
    nanmean_optional,
    pixel_auc,
    pixel_f1,
)


def auc_pairwise_oracle(scores, labels) -> float:
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def t(*vals):
    return torch.tensor(vals, dtype=torch.float64).reshape(1, -1)


# dice


def test_dice_exact_binary_prediction_is_zero():
    y = t(1, 0, 1, 1, 0)
    assert dice_loss(y, y).item() == 0.0
    assert dice_loss(y, y, smooth=0.0).item() == 0.0


def test_dice_uniform_half():
    assert dice_loss(t(0.5, 0.5, 0.5, 0.5), t(1, 1, 0, 0), smooth=0.0).item() == pytest.approx(0.5, abs=1e-15)
    # same case with the default smoothing: 1 - 3/5
    assert dice_loss(t(0.5, 0.5, 0.5, 0.5), t(1, 1, 0, 0)).item() == pytest.approx(0.4, abs=1e-15)


def test_dice_empty_mask_is_zero_and_finite():
    z = torch.zeros(2, 1, 4, 4)
    assert dice_loss(z, z).item() == 0.0


def test_dice_is_averaged_per_sample():
    pred = torch.tensor([[1.0, 1.0], [0.0, 0.0]], dtype=torch.float64)
    target = torch.tensor([[1.0, 1.0], [1.0, 1.0]], dtype=torch.float64)
    per = [dice_loss(pred[i : i + 1], target[i : i + 1]).item() for i in range(2)]
    assert dice_loss(pred, target).item() == pytest.approx(np.mean(per), abs=1e-15)


def test_dice_shape_mismatch():
    with pytest.raises(DimensionError):
        dice_loss(torch.zeros(1, 4), torch.zeros(1, 5))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_dice_range_and_permutation_symmetry(n, seed, smooth):
    rng = np.random.default_rng(seed)
    p = torch.from_numpy(rng.random((2, n)))
    y = torch.from_numpy((rng.random((2, n)) > 0.5).astype(np.float64))
    if smooth == 0.0:
        y[:, 0] = 1.0
    loss = dice_loss(p, y, smooth).item()
    assert -1e-12 <= loss <= 1 + 1e-12
    perm = torch.from_numpy(rng.permutation(n))
    assert dice_loss(p[:, perm], y[:, perm], smooth).item() == pytest.approx(loss, abs=1e-12)


def test_dice_gradient_matches_finite_differences_and_sign():
    rng = np.random.default_rng(4)
    p = torch.from_numpy(rng.uniform(0.1, 0.9, (2, 1, 4, 4)))
    y = torch.from_numpy((rng.random((2, 1, 4, 4)) > 0.5).astype(np.float64))
    assert finite_diff_check(lambda a: dice_loss(a, y), p) < 1e-6
    q = p.clone().requires_grad_(True)
    dice_loss(q, y).backward()
    assert (q.grad[y > 0] <= 0).all()


# combined


def test_combined_loss_examples():
    rng = np.random.default_rng(0)
    seg = torch.from_numpy(rng.random((2, 1, 8, 8)))
    edge = torch.from_numpy(rng.random((2, 1, 2, 2)))
    mask = (seg > 0.5).double()
    e_gt = (edge > 0.3).double()
    total, parts = combined_loss(seg, edge, mask, e_gt, LossWeights(1.0, 0.0))
    assert total.item() == parts["seg"].item() == dice_loss(seg, mask).item()
    total, parts = combined_loss(mask, e_gt, mask, e_gt)
    assert total.item() == 0.0
    total, parts = combined_loss(seg, edge, mask, e_gt, LossWeights(0.75, 0.25))
    assert total.item() == pytest.approx(0.75 * parts["seg"].item() + 0.25 * parts["edge"].item(), abs=1e-15)


def test_combined_loss_arithmetic_example():
    # unsmoothed dice terms of exactly 0.4 (1 - 6/10) and 0.8 (1 - 2/10)
    seg, seg_y = t(1, 1, 1, 1, 1, 1, 1), t(1, 1, 1, 0, 0, 0, 0)
    edge, edge_y = t(1, 1, 1, 1, 1, 1, 1, 1, 1), t(1, 0, 0, 0, 0, 0, 0, 0, 0)
    total, parts = combined_loss(seg, edge, seg_y, edge_y, LossWeights(0.75, 0.25), smooth=0.0)
    assert parts["seg"].item() == pytest.approx(0.4, abs=1e-15)
    assert parts["edge"].item() == pytest.approx(0.8, abs=1e-15)
    assert total.item() == pytest.approx(0.5, abs=1e-15)


def test_loss_weights_must_be_convex():
    with pytest.raises(ConfigError):
        LossWeights(0.8, 0.8).validate()
    with pytest.raises(ConfigError):
        LossWeights(1.2, -0.2).validate()


# f1


def test_f1_examples():
    assert pixel_f1([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0
    assert pixel_f1([0.9, 0.9, 0.1, 0.1], [1, 0, 0, 0]) == pytest.approx(2 / 3)
    assert pixel_f1([0, 0, 0, 0], [1, 0, 0, 0]) == 0.0
    assert pixel_f1([0, 0, 0], [0, 0, 0]) == 1.0
    assert pixel_f1([0.7, 0, 0], [0, 0, 0]) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_f1_invariant_to_changes_that_do_not_cross_threshold(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random(30)
    gt = rng.random(30) > 0.5
    moved = np.where(pred >= 0.5, rng.uniform(0.5, 1.0, 30), rng.uniform(0.0, 0.4999, 30))
    assert pixel_f1(pred, gt) == pixel_f1(moved, gt)


# auc


def test_auc_examples():
    assert pixel_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert pixel_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert pixel_auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_single_class_is_missing():
    assert pixel_auc([0.1, 0.9], [0, 0]) is None
    assert pixel_auc([0.1, 0.9], [1, 1]) is None
    assert nanmean_optional([None, 0.5, 1.0]) == 0.75
    assert nanmean_optional([None, None]) is None


@pytest.mark.parametrize("seed", range(20))
def test_auc_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    scores = np.round(rng.random(20), 1)  # coarse rounding forces ties
    labels = rng.random(20) > 0.5
    labels[:2] = [True, False]
    assert pixel_auc(scores, labels) == pytest.approx(auc_pairwise_oracle(scores, labels), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_auc_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=25)
    labels = rng.random(25) > 0.5
    labels[:2] = [True, False]
    base = pixel_auc(scores, labels)
    for f in (np.exp, lambda s: 3 * s - 7, lambda s: s**3, lambda s: 1 / (1 + np.exp(-s))):
        assert pixel_auc(f(scores), labels) == pytest.approx(base, abs=1e-12)


# image score


def test_image_score():
    assert image_score(torch.full((1, 1, 4, 4), 0.5)) == 0.5
    m = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    m[0, 0, 2, 1] = 0.99
    assert image_score(m) == 0.99


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_image_score_is_monotone(seed):
    rng = np.random.default_rng(seed)
    m = rng.random((1, 1, 5, 5))
    raised = m.copy()
    idx = tuple(rng.integers(0, 5, 2))
    raised[0, 0][idx] = min(1.0, raised[0, 0][idx] + rng.random())
    assert image_score(raised) >= image_score(m)


def test_exhaustive_dice_2x2():
    pred = torch.tensor([[0.2, 0.7], [0.4, 0.9]], dtype=torch.float64)
    for bits in itertools.product([0.0, 1.0], repeat=4):
        y = torch.tensor(bits, dtype=torch.float64).reshape(2, 2)
        inter = float((pred * y).sum())
        want = 1 - (2 * inter + 1) / (float(pred.sum()) + sum(bits) + 1)
        assert dice_loss(pred[None], y[None]).item() == pytest.approx(want, abs=1e-12)
