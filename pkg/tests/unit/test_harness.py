"""Unit tests for distillkit.evaluation.harness."""
import csv

import pytest

from distillkit.errors import ArgumentError, ConfigurationError, MissingArtifactError
from distillkit.evaluation import (
    EvalConfig,
    baseline,
    cross_arch,
    train_and_test,
    write_cross_arch_csv,
    write_performance_csv,
)
from distillkit.nnkit.model import ArchDescriptor
from distillkit.param_space.artifact import save_artifact
from distillkit.param_space.synthetic import build_synthetic

MLP = ArchDescriptor("mlp", 1, 16, "none")
FAST = EvalConfig(epochs=100, lr=0.1)


def read_rows(path):
    with open(path, newline="") as file_handle:
        return list(csv.reader(file_handle))


def test_full_data_ceiling(blob_split):
    """Test training on the whole real split separates the blobs."""
    train, test = blob_split
    report = train_and_test((train.images, train.labels), test, MLP, seeds=2, cfg=FAST)
    assert report.mean >= 90.0
    assert report.seeds == 2
    assert len(report.accuracies) == 2
    assert report.arch == "mlp-d1-w16-none"


def test_seeded_and_parallel(blob_split):
    """Test evaluation is reproducible and independent of the job count."""
    train, test = blob_split
    synthetic = build_synthetic(train, 2)
    cfg = EvalConfig(epochs=20, lr=0.1)
    first = train_and_test(synthetic, test, MLP, seeds=3, cfg=cfg)
    second = train_and_test(synthetic, test, MLP, seeds=3, cfg=cfg, jobs=3)
    assert first == second


def test_augmented_training_runs(blob_split):
    """Test evaluation with augmentation reports a different recipe digest."""
    train, test = blob_split
    cfg = EvalConfig(epochs=5)
    plain = train_and_test((train.images, train.labels), test, MLP, cfg=cfg)
    augmented = train_and_test((train.images, train.labels), test, MLP, augmented=True, cfg=cfg)
    assert 0.0 <= augmented.mean <= 100.0
    assert plain.config_digest != augmented.config_digest


def test_artifact_path(blob_split, tmp_path):
    """Test an artifact file evaluates like the dataset it holds."""
    train, test = blob_split
    synthetic = build_synthetic(train, 1)
    path = tmp_path / "synthetic.bin"
    save_artifact(synthetic, path, train.name)
    cfg = EvalConfig(epochs=10, lr=0.1)
    assert train_and_test(path, test, MLP, cfg=cfg) == train_and_test(synthetic, test, MLP, cfg=cfg)
    with pytest.raises(MissingArtifactError):
        train_and_test(tmp_path / "missing.bin", test, MLP, cfg=cfg)


def test_shape_mismatch(blob_split, blobs):
    """Test training data of another shape is rejected."""
    _, test = blob_split
    images = blobs.images.reshape(-1, 1, 2, 8)
    with pytest.raises(ConfigurationError, match="does not match"):
        train_and_test((images, blobs.labels), test, MLP)


def test_invalid_arguments(blob_split):
    """Test seed counts and job counts must be positive."""
    train, test = blob_split
    with pytest.raises(ArgumentError):
        train_and_test((train.images, train.labels), test, MLP, seeds=0)
    with pytest.raises(ArgumentError):
        train_and_test((train.images, train.labels), test, MLP, jobs=0)


@pytest.mark.parametrize("kind", ["random", "k-center"])
def test_baselines(blob_split, kind):
    """Test selection baselines train on ipc real images per class."""
    train, test = blob_split
    report = baseline(train, test, 1, kind, seeds=2, arch=MLP, cfg=FAST)
    assert 0.0 <= report.mean <= 100.0
    assert report == baseline(train, test, 1, kind, seeds=2, arch=MLP, cfg=FAST)


def test_unknown_baseline(blob_split):
    """Test unknown baselines are rejected."""
    train, test = blob_split
    with pytest.raises(ArgumentError):
        baseline(train, test, 1, "herding")


def test_cross_arch_tables(blob_split, tmp_path):
    """Test one report per architecture and the CSV tables."""
    train, test = blob_split
    archs = [MLP, ArchDescriptor("convnet", 1, 4, "instance")]
    reports = cross_arch(build_synthetic(train, 1), test, archs, seeds=2, cfg=EvalConfig(epochs=5))
    assert [report.arch for report in reports] == ["mlp-d1-w16-none", "convnet-d1-w4-instance"]

    rows = read_rows(write_cross_arch_csv(tmp_path / "cross.csv", "dm", "convnet-d3-w128-instance", reports))
    assert rows[0] == ["method", "train_arch", "eval_arch", "mean", "std", "seeds"]
    assert [row[2] for row in rows[1:]] == ["mlp-d1-w16-none", "convnet-d1-w4-instance"]
    assert rows[1][5] == "2"

    rows = read_rows(write_performance_csv(tmp_path / "perf.csv", [(test.name, 1, "dm", reports[0])]))
    assert rows == [
        ["dataset", "ipc", "method", "mean", "std"],
        [test.name, "1", "dm", f"{reports[0].mean:.2f}", f"{reports[0].std:.2f}"],
    ]
