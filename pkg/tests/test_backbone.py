import pytest
import torch

from msmgnet.backbone import Backbone, InputSizeError, RDown, ResidualBlock, pyramid_sizes
from msmgnet.config import BackboneConfig, ConfigError
from msmgnet.core import DimensionError
from msmgnet.gradcheck import module_check


@pytest.fixture
def toy():
    torch.manual_seed(0)
    return Backbone(BackboneConfig()).eval()


def test_r_down_shapes():
    stem = RDown(16).eval()
    assert stem(torch.zeros(1, 3, 32, 32)).shape == (1, 16, 8, 8)
    with torch.no_grad():
        assert stem(torch.zeros(1, 3, 512, 512)).shape == (1, 16, 128, 128)


def test_r_down_rejects_indivisible_size():
    with pytest.raises(InputSizeError, match="multiple of 32"):
        RDown(16)(torch.zeros(1, 3, 100, 100))


def test_zero_residual_block_is_activation_of_input():
    blk = ResidualBlock(8, 8)
    blk.zero_residual()
    x = torch.randn(2, 8, 6, 6)
    assert torch.equal(blk(x), torch.relu(x))


def test_stage_entry_block_downsamples():
    blk = ResidualBlock(8, 16, stride=2)
    assert blk(torch.randn(2, 8, 8, 8)).shape == (2, 16, 4, 4)
    with pytest.raises(DimensionError):
        blk(torch.randn(2, 4, 8, 8))


@pytest.mark.parametrize("size", range(32, 513, 32))
def test_pyramid_scale_law(toy, size):
    with torch.no_grad():
        pyr = toy(torch.randn(1, 3, size, size))
    for f, (h, w), c in zip(pyr, pyramid_sizes(size, size), toy.out_channels):
        assert f.shape == (1, c, h, w)
    for a, b in zip(pyr, pyr[1:]):
        assert a.shape[2] == 2 * b.shape[2] and a.shape[3] == 2 * b.shape[3]


def test_pyramid_512_and_batch(toy):
    with torch.no_grad():
        pyr = toy(torch.randn(2, 3, 512, 512))
    assert [f.shape[2] for f in pyr] == [128, 64, 32, 16]
    assert all(f.shape[0] == 2 for f in pyr)


def test_zeroed_residuals_leave_shortcut_path(toy):
    for stage in toy.stages:
        for blk in stage:
            blk.zero_residual()
    x = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        pyr = toy(x)
        a = toy.r_down(x)
        expected = []
        for stage in toy.stages:
            for blk in stage:
                a = torch.relu(blk.shortcut(a))
            expected.append(a)
    for f, e in zip(pyr, expected):
        assert torch.equal(f, e)


def test_config_validation():
    with pytest.raises(ConfigError):
        Backbone(BackboneConfig(stage_channels=[32, 16, 64, 128]))
    with pytest.raises(ConfigError):
        Backbone(BackboneConfig(stage_channels=[16, 32, 0, 128]))


def test_backbone_gradients():
    torch.manual_seed(1)
    cfg = BackboneConfig(stem_channels=4, stage_channels=[4, 8, 8, 16], blocks_per_stage=[1, 1, 1, 1])
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(2, 3, 64, 64, generator=gen, dtype=torch.float64)
    assert module_check(Backbone(cfg), [x]) < 1e-4
    blk = ResidualBlock(4, 8, stride=2)
    assert module_check(blk, [torch.randn(2, 4, 8, 8, generator=gen, dtype=torch.float64)], directions=None) < 1e-4
