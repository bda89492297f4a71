"""Unit tests for distillkit.param_space.synthetic and distillkit.labels."""
import pytest
import torch

from distillkit.errors import ConfigurationError
from distillkit.labels import init_labels
from distillkit.nnkit.model import build_model
from distillkit.param_space.synthetic import ParamConfig, budget_summary, build_synthetic, float_budget, materialize


def test_raw_budget(blobs):
    """Test raw ipc-k storage is k·C·D, plus k·C·C with learnable labels."""
    fixed = build_synthetic(blobs, 2)
    assert float_budget(fixed) == 2 * 3 * 16
    learnable = build_synthetic(blobs, 2, label_mode="learnable")
    summary = budget_summary(learnable)
    assert summary.total == 2 * 3 * 16 + 2 * 3 * 3
    assert summary.ipc_equivalent == pytest.approx(2.0)
    assert set(learnable.learnables()) == {"codes.images", "labels.values"}


def test_upsample_quadruples_images_at_fixed_budget(blobs):
    """Test factor-2 upsampling stores the raw budget and materializes 4× the images."""
    raw = build_synthetic(blobs, 1)
    upsampled = build_synthetic(blobs, 1, ParamConfig(kind="upsample", factor=2))
    assert float_budget(upsampled) == float_budget(raw)
    assert upsampled.num_images == 4 * raw.num_images
    images, labels = materialize(upsampled)
    assert images.shape == (12, 1, 4, 4)
    assert labels.sum(dim=0).tolist() == [4.0, 4.0, 4.0]


def test_upsample_factor_must_divide(blobs):
    """Test image sides must be divisible by the factor."""
    with pytest.raises(ConfigurationError, match="not divisible"):
        build_synthetic(blobs, 1, ParamConfig(kind="upsample", factor=3))


def test_hallucinator_images(blobs):
    """Test three codes and two decoders materialize six images."""
    synthetic = build_synthetic(blobs, 1, ParamConfig(kind="hallucinator", codes_per_class=1, decoders=2))
    images, _ = materialize(synthetic)
    assert images.shape == (6, 1, 4, 4)
    assert synthetic.classes.tolist() == [0, 0, 1, 1, 2, 2]
    images.sum().backward()
    assert all(value.grad is not None for value in synthetic.mapper.values())


def test_memory_images(blobs):
    """Test addressing matrices times shared bases give C·R images."""
    synthetic = build_synthetic(blobs, 2, ParamConfig(kind="memory"))
    summary = budget_summary(synthetic)
    assert summary.codes == 3 * 2 * 3
    assert summary.mapper == 3 * 16
    images, _ = materialize(synthetic)
    assert images.shape == (6, 1, 4, 4)
    # near one-hot addresses start every image close to its class basis
    assert torch.allclose(images[0].flatten(), synthetic.mapper["bases"][0], atol=0.2)


def test_synthetic_set_must_be_smaller(blobs):
    """Test a synthetic set as large as the real one is rejected."""
    with pytest.raises(ConfigurationError, match="not smaller"):
        build_synthetic(blobs, 20)


def test_label_modes(blobs, tiny_mlp):
    """Test fixed, learnable and teacher-soft labels."""
    classes = torch.tensor([0, 1, 2])
    fixed = init_labels("fixed-onehot", classes, 3)
    assert not fixed.learnable and fixed.float_count == 0
    learnable = init_labels("learnable", classes, 3)
    assert learnable.values.requires_grad and learnable.float_count == 9
    teacher = build_model(tiny_mlp, seed=0)
    soft = init_labels("teacher-soft", classes, 3, teacher, blobs.images[:3])
    assert torch.allclose(soft.values.sum(dim=1), torch.ones(3))
    assert not soft.values.requires_grad
    with pytest.raises(ConfigurationError):
        init_labels("teacher-soft", classes, 3)
    with pytest.raises(ConfigurationError):
        init_labels("fixed-onehot", classes, 3, teacher, blobs.images[:3])
