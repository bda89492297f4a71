"""Fixtures for pytest."""
import pytest
import torch

from distillkit.data import RealDataset, make_blobs, train_test_split
from distillkit.nnkit.model import ArchDescriptor
from distillkit.nnkit.train import TrainConfig
from distillkit.nnkit.trajectory import TrajectoryStore, record_teachers


@pytest.fixture
def float64():
    """Switch the default dtype to float64 for gradient checks."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield torch.float64
    torch.set_default_dtype(previous)


@pytest.fixture(scope="session")
def blobs() -> RealDataset:
    """Three well separated classes of 1×4×4 images, 20 per class."""
    return make_blobs(classes=3, per_class=20, dim=16, separation=5.0, seed=0)


@pytest.fixture(scope="session")
def blob_split():
    """Stratified (train, test) halves of a larger blob set."""
    return train_test_split(make_blobs(classes=3, per_class=60, dim=16, separation=5.0, seed=1), 0.5, seed=1)


@pytest.fixture
def blobs64(float64) -> RealDataset:  # pylint: disable=redefined-outer-name,unused-argument
    """Float64 blobs for finite-difference checks."""
    return make_blobs(classes=3, per_class=20, dim=16, separation=5.0, seed=0)


@pytest.fixture(scope="session")
def tiny_mlp() -> ArchDescriptor:
    """One hidden layer of 16 units over 1×4×4 inputs."""
    return ArchDescriptor("mlp", 1, 16, "none", (1, 4, 4), 3)


@pytest.fixture(scope="session")
def tiny_convnet() -> ArchDescriptor:
    """Two 4-channel conv blocks with instance norm over 1×4×4 inputs."""
    return ArchDescriptor("convnet", 2, 4, "instance", (1, 4, 4), 3)


@pytest.fixture(scope="session")
def trajectory_store(tmp_path_factory, blobs, tiny_mlp) -> TrajectoryStore:  # pylint: disable=redefined-outer-name
    """Two recorded teachers with five full-batch checkpoints each."""
    root = tmp_path_factory.mktemp("teachers")
    config = TrainConfig(steps=4, lr=0.1, batch_size=0, seed=0)
    return record_teachers(blobs.images, blobs.labels, tiny_mlp, config, 2, root)
