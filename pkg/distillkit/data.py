"""Real datasets, toy datasets and synthetic-set initialization."""
from __future__ import annotations

import gzip
import logging
import math
import os
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import requests
import torch
from construct import ConstructError  # type: ignore

from distillkit._layouts.idx import (
    CIFAR_RECORD_LAYOUT,
    IDX_HEADER_LAYOUT,
    IDX_MAGIC_LAYOUT,
    IMAGES_MAGIC,
    LABELS_MAGIC,
    IdxDataType,
)
from distillkit.errors import ArgumentError, FormatError, InsufficientDataError, MissingArtifactError
from distillkit.types import Digest, InitKind
from distillkit.utils.helpers import digest
from distillkit.utils.validate import validate_choice, validate_positive

logger = logging.getLogger("distillkit.data")

IDX_FILES = {
    "mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
    "fashion-mnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
}
"""IDX file names of the MNIST-family datasets, per split."""


def get_default_data_dir() -> Path:
    """Get the default dataset directory."""
    return Path(os.environ.get("DISTILLKIT_DATA_DIR", "./data"))


def get_default_mirror(name: str) -> str:
    """Get the default download mirror of an MNIST-family dataset."""
    default = {
        "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist",
        "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com",
    }[name]
    return os.environ.get("DISTILLKIT_MNIST_MIRROR", default)


class RealDataset(NamedTuple):
    """Labeled image collection, the distillation source.

    Build instances with :func:`make_dataset`, which checks the invariants.
    """

    images: torch.Tensor
    """N×C_in×H×W images with values in [0, 1]."""
    labels: torch.Tensor
    """N×C one-hot labels."""
    class_index: Tuple[torch.Tensor, ...]
    """Sample ids of every class; together they partition [0, N)."""
    name: str
    """Dataset identifier."""

    @property
    def num_classes(self) -> int:
        """Number of classes C."""
        return int(self.labels.shape[1])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        """C_in, H, W."""
        return tuple(self.images.shape[1:])  # type: ignore

    def __len__(self) -> int:
        """Number of samples N."""
        return int(self.images.shape[0])

    def class_ids(self) -> torch.Tensor:
        """Integer class of every sample."""
        return self.labels.argmax(dim=1)

    def checksum(self) -> Digest:
        """Digest of images and labels, used to assert a dataset was not mutated."""
        return digest(self.images, self.labels)

    def subset(self, indices: torch.Tensor, name: Optional[str] = None) -> RealDataset:
        """Dataset restricted to ``indices`` (in the given order)."""
        return make_dataset(self.images[indices], self.labels[indices].argmax(dim=1), self.num_classes, name or self.name)


class InitStrategy(NamedTuple):
    """How synthetic images are initialized."""

    kind: InitKind = "real-sample"
    """One of ``noise``, ``real-sample`` or ``k-center``."""
    seed: int = 0
    """Seed of the initialization stream."""


def make_dataset(images: torch.Tensor, classes: torch.Tensor, num_classes: int, name: str) -> RealDataset:
    """Build a :class:`RealDataset` from images and integer class ids.

    :param images: N×C_in×H×W tensor with values in [0, 1].
    :param classes: N integer class ids.
    :param num_classes: Number of classes C.
    :param name: Dataset identifier.

    >>> data = make_dataset(torch.zeros(4, 1, 2, 2), torch.tensor([0, 1, 1, 0]), 2, "toy")
    >>> [ids.tolist() for ids in data.class_index]
    [[0, 3], [1, 2]]
    """
    if images.dim() != 4:
        raise ArgumentError(f"images must be N×C×H×W, got shape {tuple(images.shape)}")
    if images.shape[0] != classes.shape[0]:
        raise ArgumentError(f"{images.shape[0]} images but {classes.shape[0]} labels")
    if not images.shape[0] >= num_classes >= 2:
        raise ArgumentError(f"need N >= C >= 2, got N={images.shape[0]}, C={num_classes}")
    classes = classes.long()
    if int(classes.min()) < 0 or int(classes.max()) >= num_classes:
        raise ArgumentError(f"class ids must lie in [0, {num_classes})")
    labels = torch.nn.functional.one_hot(classes, num_classes).to(images.dtype)
    class_index = tuple(torch.nonzero(classes == c, as_tuple=False).flatten() for c in range(num_classes))
    return RealDataset(images=images, labels=labels, class_index=class_index, name=name)


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise MissingArtifactError("dataset file", str(path))
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as file_handle:
            return file_handle.read()
    return path.read_bytes()


def parse_idx(raw: bytes) -> np.ndarray:
    """Parse an IDX blob of unsigned bytes into an array of its declared shape.

    >>> blob = bytes([0, 0, 8, 1, 0, 0, 0, 2, 7, 9])
    >>> parse_idx(blob).tolist()
    [7, 9]
    """
    if len(raw) < IDX_MAGIC_LAYOUT.sizeof():
        raise FormatError(f"truncated IDX magic: {len(raw)} bytes", offset=len(raw))
    try:
        magic = IDX_MAGIC_LAYOUT.parse(raw)
    except ConstructError as err:
        raise FormatError(f"bad IDX magic 0x{raw[:4].hex()}", offset=0) from err
    magic_number = int.from_bytes(raw[:4], byteorder="big")
    if magic_number not in (IMAGES_MAGIC, LABELS_MAGIC) or magic.dtype != IdxDataType.UBYTE:
        raise FormatError(f"unsupported IDX magic 0x{magic_number:08x}", offset=0)
    header_size = IDX_MAGIC_LAYOUT.sizeof() + 4 * magic.ndim
    if len(raw) < header_size:
        raise FormatError(f"truncated IDX dimensions: {len(raw)} of {header_size} header bytes", offset=len(raw))
    header = IDX_HEADER_LAYOUT.parse(raw)
    dims = [int(dim) for dim in header.dims]
    count = math.prod(dims)
    if len(raw) < header_size + count:
        raise FormatError(f"truncated IDX data: expected {count} bytes after the header", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_size).reshape(dims)


def load_idx(path: "os.PathLike[str]", labels_path: Optional["os.PathLike[str]"] = None, name: str = "") -> RealDataset:
    """Load an IDX image file and its IDX label file.

    :param path: IDX file of N×H×W unsigned bytes (optionally gzipped).
    :param labels_path: IDX file of N labels. Defaults to the sibling ``*-labels-idx1-ubyte`` file.
    :param name: Dataset name; defaults to the parent directory name.
    """
    path = Path(path)
    if labels_path is None:
        labels_path = path.with_name(path.name.replace("images-idx3", "labels-idx1"))
    images = parse_idx(_read_bytes(path))
    classes = parse_idx(_read_bytes(Path(labels_path)))
    if images.ndim != 3 or classes.ndim != 1:
        raise FormatError(f"expected N×H×W images and N labels, got {images.shape} and {classes.shape}", offset=0)
    logger.debug("Loaded IDX file. Path: %s, Shape: %s", path, images.shape)
    pixels = torch.from_numpy(images.astype(np.float32) / 255.0).unsqueeze(1)
    labels = torch.from_numpy(classes.astype(np.int64))
    return make_dataset(pixels, labels, int(labels.max()) + 1, name or path.parent.name)


def load_cifar_batch(path: "os.PathLike[str]", name: str = "cifar10") -> RealDataset:
    """Load a CIFAR binary batch (one label byte + 3072 pixel bytes per record)."""
    raw = _read_bytes(Path(path))
    record_size = CIFAR_RECORD_LAYOUT.sizeof()
    if not raw or len(raw) % record_size:
        raise FormatError(f"CIFAR batch is not a whole number of {record_size}-byte records", offset=len(raw) - len(raw) % record_size)
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record_size)
    pixels = torch.from_numpy(records[:, 1:].astype(np.float32) / 255.0).reshape(-1, 3, 32, 32)
    labels = torch.from_numpy(records[:, 0].astype(np.int64))
    return make_dataset(pixels, labels, 10, name)


def download_idx(name: str, data_dir: Optional[Path] = None, mirror: Optional[str] = None) -> Path:
    """Download the gzipped IDX files of an MNIST-family dataset into ``data_dir/name``.

    Files already present are kept. Returns the dataset directory.
    """
    validate_choice("dataset", name, IDX_FILES)
    target = (data_dir or get_default_data_dir()) / name
    target.mkdir(parents=True, exist_ok=True)
    base = mirror or get_default_mirror(name)
    for images_file, labels_file in IDX_FILES[name].values():
        for file_name in (images_file, labels_file):
            dest = target / f"{file_name}.gz"
            if dest.exists():
                continue
            url = f"{base}/{file_name}.gz"
            logger.info("Downloading %s", url)
            response = requests.get(url, timeout=60)
            response.raise_for_status()
            tmp = dest.with_suffix(".part")
            tmp.write_bytes(response.content)
            os.replace(tmp, dest)
    return target


def load_named(name: str, split: str = "train", data_dir: Optional[Path] = None) -> RealDataset:
    """Load a MNIST-family split from ``data_dir/name``, accepting plain or gzipped files."""
    validate_choice("dataset", name, IDX_FILES)
    root = (data_dir or get_default_data_dir()) / name
    images_file, labels_file = IDX_FILES[name][split]
    images_path, labels_path = root / images_file, root / labels_file
    if not images_path.exists():
        images_path, labels_path = images_path.with_name(images_file + ".gz"), labels_path.with_name(labels_file + ".gz")
    return load_idx(images_path, labels_path, name=name)


def make_blobs(
    classes: int, per_class: int, dim: int, separation: float, seed: int, image_shape: bool = True
) -> RealDataset:
    """Gaussian clusters, one per class, scaled into [0, 1].

    Class centers lie at distance ``separation`` from the origin in random directions; samples add
    unit Gaussian noise. Pixels are then min-max scaled over the whole set.

    :param classes: Number of classes (>= 2).
    :param per_class: Samples per class (>= 1).
    :param dim: Feature dimension.
    :param separation: Center radius (> 0).
    :param seed: Seed.
    :param image_shape: Reshape to 1×√dim×√dim images; otherwise 1×1×dim.

    >>> make_blobs(3, 100, 4, 5.0, 0).images.shape
    torch.Size([300, 1, 2, 2])
    """
    if classes < 2 or per_class < 1:
        raise ArgumentError(f"need classes >= 2 and per_class >= 1, got {classes} and {per_class}")
    validate_positive("separation", separation)
    side = math.isqrt(dim)
    if image_shape and side * side != dim:
        raise ArgumentError(f"dim {dim} is not a perfect square; pass image_shape=False")
    generator = torch.Generator().manual_seed(seed)
    directions = torch.randn(classes, dim, generator=generator, dtype=torch.float64)
    centers = separation * directions / directions.norm(dim=1, keepdim=True)
    noise = torch.randn(classes, per_class, dim, generator=generator, dtype=torch.float64)
    points = (centers.unsqueeze(1) + noise).reshape(classes * per_class, dim)
    points = (points - points.min()) / (points.max() - points.min())
    shape = (1, side, side) if image_shape else (1, 1, dim)
    images = points.to(torch.get_default_dtype()).reshape(-1, *shape)
    labels = torch.arange(classes).repeat_interleave(per_class)
    return make_dataset(images, labels, classes, f"blobs-{classes}x{per_class}-d{dim}")


def train_test_split(real: RealDataset, test_fraction: float, seed: int) -> Tuple[RealDataset, RealDataset]:
    """Stratified split keeping at least one sample of every class on each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    generator = torch.Generator().manual_seed(seed)
    train_ids: List[torch.Tensor] = []
    test_ids: List[torch.Tensor] = []
    for class_id, ids in enumerate(real.class_index):
        if len(ids) < 2:
            raise InsufficientDataError(class_id, len(ids), 2)
        shuffled = ids[torch.randperm(len(ids), generator=generator)]
        n_test = min(max(1, round(len(ids) * test_fraction)), len(ids) - 1)
        test_ids.append(shuffled[:n_test])
        train_ids.append(shuffled[n_test:])
    return (
        real.subset(torch.cat(train_ids), name=f"{real.name}-train"),
        real.subset(torch.cat(test_ids), name=f"{real.name}-test"),
    )


def sample_class_batch(real: RealDataset, class_id: int, count: int, generator: torch.Generator) -> torch.Tensor:
    """Up to ``count`` distinct images of one class, drawn uniformly."""
    ids = real.class_index[class_id]
    chosen = ids[torch.randperm(len(ids), generator=generator)[: min(count, len(ids))]]
    return real.images[chosen]


def sample_batch(real: RealDataset, per_class: int, generator: torch.Generator) -> Tuple[torch.Tensor, torch.Tensor]:
    """Class-balanced real batch (X_t, Y_t) with ``min(per_class, class size)`` images per class."""
    images, labels = [], []
    for class_id in range(real.num_classes):
        batch = sample_class_batch(real, class_id, per_class, generator)
        images.append(batch)
        labels.append(real.labels[real.class_index[class_id][:1]].expand(batch.shape[0], -1))
    return torch.cat(images), torch.cat(labels)


def k_center_indices(points: torch.Tensor, count: int) -> List[int]:
    """Greedy farthest-point selection of ``count`` rows of ``points``.

    The first center is the row farthest from the mean; each next center is the row farthest from
    the chosen set. Ties go to the lowest row index.

    >>> k_center_indices(torch.tensor([[0.0], [1.0], [3.0]]), 2)
    [2, 0]
    """
    flat = points.reshape(points.shape[0], -1).to(torch.float64)
    min_dist = (flat - flat.mean(dim=0, keepdim=True)).norm(dim=1)
    chosen: List[int] = []
    for _ in range(count):
        index = int(torch.argmax(min_dist))
        chosen.append(index)
        min_dist = torch.minimum(min_dist, (flat - flat[index]).norm(dim=1))
        min_dist[chosen] = -1.0
    return chosen


def select_indices(real: RealDataset, ipc: int, kind: InitKind, generator: torch.Generator) -> torch.Tensor:
    """Per-class sample ids chosen by ``real-sample`` (uniform) or ``k-center``, class-major order."""
    validate_choice("selection", kind, ("real-sample", "k-center"))
    chosen = []
    for class_id, ids in enumerate(real.class_index):
        if len(ids) < ipc:
            raise InsufficientDataError(class_id, len(ids), ipc)
        if kind == "k-center":
            local = torch.tensor(k_center_indices(real.images[ids], ipc), dtype=torch.long)
        else:
            local = torch.randperm(len(ids), generator=generator)[:ipc]
        chosen.append(ids[local])
    return torch.cat(chosen)


def init_synthetic(real: RealDataset, ipc: int, strategy: InitStrategy = InitStrategy()) -> torch.Tensor:
    """Raw synthetic images, ``ipc`` per class in class-major order.

    ``noise`` draws standard-normal pixels, ``real-sample`` copies distinct per-class samples chosen
    uniformly, ``k-center`` copies the greedy farthest-point selection of every class in pixel space.
    """
    if ipc < 1:
        raise ArgumentError(f"ipc must be >= 1, got {ipc}")
    validate_choice("init strategy", strategy.kind, ("noise", "real-sample", "k-center"))
    generator = torch.Generator().manual_seed(strategy.seed)
    if strategy.kind == "noise":
        shape = (ipc * real.num_classes, *real.image_shape)
        return torch.randn(shape, generator=generator, dtype=real.images.dtype)
    return real.images[select_indices(real, ipc, strategy.kind, generator)].clone()
