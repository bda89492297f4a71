"""Unit tests for distillkit.data."""
import gzip
import struct

import numpy as np
import pytest
import torch

from distillkit import data
from distillkit.errors import ArgumentError, FormatError, InsufficientDataError, MissingArtifactError


def idx_bytes(array: np.ndarray) -> bytes:
    """IDX encoding of an unsigned-byte array."""
    header = bytes([0, 0, 0x08, array.ndim]) + b"".join(struct.pack(">I", dim) for dim in array.shape)
    return header + array.astype(np.uint8).tobytes()


@pytest.fixture
def idx_dir(tmp_path):
    """A tiny MNIST-like train split, the images gzipped."""
    images = np.arange(6 * 2 * 3, dtype=np.uint8).reshape(6, 2, 3)
    labels = np.array([0, 1, 2, 0, 1, 2], dtype=np.uint8)
    root = tmp_path / "mnist"
    root.mkdir()
    with gzip.open(root / "train-images-idx3-ubyte.gz", "wb") as file_handle:
        file_handle.write(idx_bytes(images))
    with gzip.open(root / "train-labels-idx1-ubyte.gz", "wb") as file_handle:
        file_handle.write(idx_bytes(labels))
    return tmp_path


def test_make_dataset_partitions_classes():
    """Test class indices partition the sample ids."""
    real = data.make_dataset(torch.rand(5, 1, 2, 2), torch.tensor([2, 0, 1, 2, 0]), 3, "toy")
    ids = torch.cat(real.class_index).sort().values
    assert ids.tolist() == list(range(5))
    assert real.labels.sum(dim=1).tolist() == [1.0] * 5
    assert real.image_shape == (1, 2, 2)


@pytest.mark.parametrize(
    "images, classes, num_classes",
    [
        (torch.rand(4, 2, 2), torch.tensor([0, 1, 0, 1]), 2),
        (torch.rand(4, 1, 2, 2), torch.tensor([0, 1, 0]), 2),
        (torch.rand(1, 1, 2, 2), torch.tensor([0]), 2),
        (torch.rand(3, 1, 2, 2), torch.tensor([0, 1, 3]), 2),
    ],
)
def test_make_dataset_rejects_bad_input(images, classes, num_classes):
    """Test shape, count and label-range checks."""
    with pytest.raises(ArgumentError):
        data.make_dataset(images, classes, num_classes, "bad")


def test_parse_idx_errors_name_offsets():
    """Test truncated and foreign blobs raise FormatError with a byte offset."""
    with pytest.raises(FormatError, match="at byte offset 2"):
        data.parse_idx(b"\x00\x00")
    with pytest.raises(FormatError, match="unsupported IDX magic 0x00000d03"):
        data.parse_idx(bytes([0, 0, 0x0D, 3]) + bytes(12))
    blob = idx_bytes(np.zeros((2, 2, 2), dtype=np.uint8))
    with pytest.raises(FormatError) as exc_info:
        data.parse_idx(blob[:-1])
    assert exc_info.value.offset == len(blob) - 1


def test_load_named_reads_gzipped_files(idx_dir):
    """Test loading a split scales pixels into [0, 1] and keeps labels."""
    real = data.load_named("mnist", "train", idx_dir)
    assert real.images.shape == (6, 1, 2, 3)
    assert float(real.images.max()) == pytest.approx(35 / 255.0)
    assert real.class_ids().tolist() == [0, 1, 2, 0, 1, 2]
    assert real.name == "mnist"


def test_load_named_missing_split(idx_dir):
    """Test a missing split names the file it looked for."""
    with pytest.raises(MissingArtifactError, match="t10k-images-idx3-ubyte"):
        data.load_named("mnist", "test", idx_dir)


def test_load_cifar_batch(tmp_path):
    """Test CIFAR records split into a label byte and 3×32×32 pixels."""
    records = np.zeros((10, 1 + 3072), dtype=np.uint8)
    records[:, 0] = np.arange(10)
    records[:, 1] = 255
    path = tmp_path / "data_batch_1.bin"
    path.write_bytes(records.tobytes())
    real = data.load_cifar_batch(path)
    assert real.images.shape == (10, 3, 32, 32)
    assert float(real.images[0, 0, 0, 0]) == 1.0
    assert real.num_classes == 10
    path.write_bytes(records.tobytes()[:-5])
    with pytest.raises(FormatError):
        data.load_cifar_batch(path)


def test_make_blobs_is_seeded_and_scaled():
    """Test blobs are reproducible and min-max scaled."""
    first = data.make_blobs(3, 10, 16, 4.0, seed=5)
    second = data.make_blobs(3, 10, 16, 4.0, seed=5)
    assert torch.equal(first.images, second.images)
    assert float(first.images.min()) == 0.0 and float(first.images.max()) == 1.0
    assert data.make_blobs(3, 10, 5, 4.0, seed=0, image_shape=False).image_shape == (1, 1, 5)
    with pytest.raises(ArgumentError, match="perfect square"):
        data.make_blobs(3, 10, 5, 4.0, seed=0)


def test_train_test_split_is_stratified(blobs):
    """Test every class lands on both sides of the split."""
    train, test = data.train_test_split(blobs, 0.25, seed=0)
    assert len(train) + len(test) == len(blobs)
    assert [len(ids) for ids in test.class_index] == [5, 5, 5]
    assert [len(ids) for ids in train.class_index] == [15, 15, 15]


def test_sample_batch_is_class_balanced(blobs):
    """Test real batches hold min(per_class, class size) images of every class."""
    images, labels = data.sample_batch(blobs, 4, torch.Generator().manual_seed(0))
    assert images.shape[0] == 12
    assert labels.sum(dim=0).tolist() == [4.0, 4.0, 4.0]
    images, _ = data.sample_batch(blobs, 100, torch.Generator().manual_seed(0))
    assert images.shape[0] == len(blobs)


def test_select_indices_k_center(blobs):
    """Test k-center picks distinct members of each class, class-major."""
    ids = data.select_indices(blobs, 3, "k-center", torch.Generator())
    assert len(set(ids.tolist())) == 9
    assert blobs.class_ids()[ids].tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2]
    with pytest.raises(InsufficientDataError) as exc_info:
        data.select_indices(blobs, 21, "real-sample", torch.Generator())
    assert exc_info.value.class_id == 0


def test_init_synthetic_strategies(blobs):
    """Test noise, real-sample and k-center initializations."""
    noise = data.init_synthetic(blobs, 2, data.InitStrategy("noise", seed=1))
    assert noise.shape == (6, 1, 4, 4)
    sampled = data.init_synthetic(blobs, 2, data.InitStrategy("real-sample", seed=1))
    flat = blobs.images.flatten(1)
    for image in sampled.flatten(1):
        assert bool((flat == image).all(dim=1).any())
    assert torch.equal(sampled, data.init_synthetic(blobs, 2, data.InitStrategy("real-sample", seed=1)))
    with pytest.raises(ArgumentError):
        data.init_synthetic(blobs, 0)
