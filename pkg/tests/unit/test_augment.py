"""Unit tests for distillkit.param_space.augment."""
import pytest
import torch

from distillkit.errors import ArgumentError
from distillkit.param_space.augment import DSA_OPS, DSAConfig, DSAParams, apply_params, augment, draw_params, dsa_apply
from distillkit.utils.helpers import digest


def test_draws_are_pure_functions_of_the_seed():
    """Test equal seeds give equal draws and different seeds differ."""
    config = DSAConfig()
    assert draw_params(config, 11, (8, 8)) == draw_params(config, 11, (8, 8))
    assert [params.op for params in draw_params(config, 11, (8, 8))] == list(DSA_OPS)
    assert any(draw_params(config, 11, (8, 8)) != draw_params(config, seed, (8, 8)) for seed in range(12, 16))


def test_one_mode_applies_a_single_op():
    """Test the one mode draws a single op."""
    assert len(draw_params(DSAConfig(mode="one"), 3, (4, 4))) == 1


def test_siamese_draws_match_over_iterations():
    """Test the same image is transformed identically in the real and the synthetic batch."""
    config = DSAConfig()
    shared = torch.rand(1, 3, 8, 8)
    for seed in range(100):
        real = torch.cat([shared, torch.rand(1, 3, 8, 8)])
        syn = torch.cat([shared.clone(), torch.rand(1, 3, 8, 8)])
        real, syn = dsa_apply(real, syn, config, seed)
        assert digest(real[:1]) == digest(syn[:1])


def test_flip_and_crop():
    """Test flip mirrors the width axis and crop shifts with zero padding."""
    image = torch.arange(4.0).view(1, 1, 2, 2)
    assert apply_params(image, DSAParams("flip", (1.0,))).flatten().tolist() == [1.0, 0.0, 3.0, 2.0]
    assert torch.equal(apply_params(image, DSAParams("flip", (0.0,))), image)
    shifted = apply_params(image, DSAParams("crop", (0.0, 1.0)))
    assert shifted.flatten().tolist() == [1.0, 0.0, 3.0, 0.0]


def test_cutout_zeroes_a_box():
    """Test cutout zeroes a box of cutout_ratio · side around the drawn center."""
    out = apply_params(torch.ones(1, 1, 4, 4), DSAParams("cutout", (2.0, 2.0)), DSAConfig(cutout_ratio=0.5))
    assert float(out.sum()) == 12.0
    assert float(out[0, 0, 1:3, 1:3].sum()) == 0.0


def test_augment_is_differentiable():
    """Test every op passes gradients to the pixels."""
    for op in DSA_OPS:
        images = torch.rand(2, 3, 8, 8, requires_grad=True)
        augment(images, DSAConfig(ops=(op,)), seed=5).sum().backward()
        assert images.grad is not None and images.grad.shape == images.shape


def test_config_validation():
    """Test unknown ops and out-of-range settings are rejected."""
    with pytest.raises(ArgumentError):
        DSAConfig(ops=("blur",)).validate()
    with pytest.raises(ArgumentError):
        DSAConfig(ops=()).validate()
    with pytest.raises(ArgumentError):
        DSAConfig(scale=0.5).validate()
    with pytest.raises(ArgumentError):
        dsa_apply(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 5, 5), DSAConfig(), 0)
