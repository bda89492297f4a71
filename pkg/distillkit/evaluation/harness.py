"""Train-on-synthetic, test-on-real evaluation, selection baselines and cross-architecture transfer."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from typing_extensions import Literal

from distillkit._utils.encoding import FriendlyJsonSerde
from distillkit.data import RealDataset, select_indices
from distillkit.engine.runner import resolve_arch
from distillkit.errors import ConfigurationError
from distillkit.nnkit.model import ArchDescriptor, ModelState, build_model, forward, model_loss
from distillkit.param_space.artifact import load_artifact
from distillkit.param_space.augment import DSAConfig, augment
from distillkit.param_space.synthetic import SyntheticDataset, materialize
from distillkit.types import Digest
from distillkit.utils.helpers import digest, make_generator
from distillkit.utils.validate import validate_choice, validate_positive

logger = logging.getLogger("distillkit.evaluation")

TrainingData = Union[SyntheticDataset, Tuple[torch.Tensor, torch.Tensor], "os.PathLike[str]", str]
"""A synthetic dataset, an artifact path, or materialized (images, soft or one-hot labels)."""

BaselineKind = Literal["random", "k-center"]

PERFORMANCE_COLUMNS = ("dataset", "ipc", "method", "mean", "std")
CROSS_ARCH_COLUMNS = ("method", "train_arch", "eval_arch", "mean", "std", "seeds")

TEST_CHUNK = 1000
"""Test images per forward pass."""


class EvalConfig(NamedTuple):
    """Training recipe of every evaluation model."""

    epochs: int = 300
    """Passes over the training data."""
    lr: float = 0.01
    """Initial learning rate, cosine-decayed to 0."""
    momentum: float = 0.9
    """SGD momentum."""
    batch_size: int = 256
    """Mini-batch size."""
    weight_decay: float = 0.0
    """L2 penalty."""
    dsa: DSAConfig = DSAConfig()
    """Augmentation applied when an evaluation asks for it."""
    seed: int = 0
    """Seed of the first evaluation model; seed ``i`` uses ``seed + i``."""

    def validate(self) -> None:
        """Check the recipe, raising :class:`ArgumentError`."""
        validate_positive("epochs", self.epochs)
        validate_positive("lr", self.lr)
        validate_positive("batch_size", self.batch_size)
        validate_positive("weight_decay", self.weight_decay, strict=False)
        self.dsa.validate()


class EvalReport(NamedTuple):
    """Test accuracy of models trained on one training set."""

    mean: float
    """Mean accuracy in percent."""
    std: float
    """Population standard deviation of the accuracy over seeds, in percent."""
    seeds: int
    """Number of evaluation models."""
    arch: str
    """Architecture id of the evaluation models."""
    config_digest: Digest
    """Digest of the training recipe, the architecture and the augmentation flag."""
    accuracies: Tuple[float, ...] = ()
    """Per-seed accuracy in percent."""


def config_digest(cfg: EvalConfig, arch: ArchDescriptor, augmented: bool) -> Digest:
    """Digest identifying an evaluation recipe."""
    return digest(FriendlyJsonSerde().json_encode({"config": cfg, "arch": arch.id, "augment": augmented}))


def summarize(accuracies: Sequence[float], arch: ArchDescriptor, digest_: Digest) -> EvalReport:
    """Report over per-seed accuracies.

    >>> summarize([50.0, 70.0], ArchDescriptor(), Digest("x")).std
    10.0
    """
    values = np.asarray(accuracies, dtype=np.float64)
    return EvalReport(
        mean=float(values.mean()),
        std=float(values.std()),
        seeds=len(values),
        arch=arch.id,
        config_digest=digest_,
        accuracies=tuple(float(value) for value in values),
    )


def training_tensors(data: TrainingData, dtype: torch.dtype) -> Tuple[torch.Tensor, torch.Tensor]:
    """Materialized, detached (images, labels) of ``data`` in ``dtype``."""
    if isinstance(data, (str, os.PathLike)):
        data, _ = load_artifact(data)
    if isinstance(data, SyntheticDataset):
        with torch.no_grad():
            images, labels = materialize(data)
    else:
        images, labels = data
    return images.detach().to(dtype), labels.detach().to(dtype)


def train_model(
    arch: ArchDescriptor,
    images: torch.Tensor,
    labels: torch.Tensor,
    cfg: EvalConfig = EvalConfig(),
    seed: int = 0,
    augmented: bool = False,
) -> ModelState:
    """Train a fresh network on (images, labels) with SGD and a cosine learning-rate schedule."""
    model = build_model(arch, seed=seed, dtype=images.dtype)
    params = model.params.clone().requires_grad_(True)
    optimizer = torch.optim.SGD([params], lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    steps_per_epoch = math.ceil(images.shape[0] / cfg.batch_size)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs * steps_per_epoch)
    batches = make_generator(seed, "batch")
    augments = make_generator(seed, "augment")
    for _ in range(cfg.epochs):
        order = torch.randperm(images.shape[0], generator=batches)
        for start in range(0, images.shape[0], cfg.batch_size):
            ids = order[start : start + cfg.batch_size]
            batch = images[ids]
            if augmented:
                batch = augment(batch, cfg.dsa, int(torch.randint(0, 2 ** 62, (1,), generator=augments).item()))
            optimizer.zero_grad(set_to_none=True)
            model_loss(model, batch, labels[ids], "cross-entropy", params).backward()
            optimizer.step()
            scheduler.step()
    return model.with_params(params.detach())


def accuracy(model: ModelState, test: RealDataset) -> float:
    """Top-1 accuracy on ``test`` in percent."""
    correct = 0
    with torch.no_grad():
        for start in range(0, len(test), TEST_CHUNK):
            images = test.images[start : start + TEST_CHUNK].to(model.params.dtype)
            _, logits = forward(model, images)
            truth = test.labels[start : start + TEST_CHUNK].argmax(dim=1)
            correct += int((logits.argmax(dim=1) == truth).sum())
    return 100.0 * correct / len(test)


def train_and_test(
    data: TrainingData,
    test: RealDataset,
    arch: ArchDescriptor = ArchDescriptor(),
    seeds: int = 1,
    augmented: bool = False,
    cfg: EvalConfig = EvalConfig(),
    jobs: int = 1,
) -> EvalReport:
    """Train ``seeds`` fresh networks on ``data`` and report their accuracy on ``test``.

    :param data: Synthetic dataset, artifact path or materialized (images, labels).
    :param test: Held-out real test set.
    :param arch: Evaluation architecture; input shape and class count come from ``test``.
    :param seeds: Number of evaluation models.
    :param augmented: Apply DSA to every training batch.
    :param cfg: Training recipe.
    :param jobs: Seeds trained in parallel threads.
    """
    validate_positive("seeds", seeds)
    validate_positive("jobs", jobs)
    cfg.validate()
    images, labels = training_tensors(data, test.images.dtype)
    if tuple(images.shape[1:]) != test.image_shape or labels.shape[1] != test.num_classes:
        raise ConfigurationError(
            f"training data of shape {tuple(images.shape[1:])} with {labels.shape[1]} classes does not match "
            f"{test.name} ({test.image_shape}, {test.num_classes} classes)"
        )
    arch = resolve_arch(arch, test)

    def one(index: int) -> float:
        model = train_model(arch, images, labels, cfg, seed=cfg.seed + index, augmented=augmented)
        result = accuracy(model, test)
        logger.debug("Evaluated. Arch: %s, Seed: %d, Accuracy: %.2f", arch.id, cfg.seed + index, result)
        return result

    if jobs == 1:
        accuracies = [one(index) for index in range(seeds)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            accuracies = list(executor.map(one, range(seeds)))
    report = summarize(accuracies, arch, config_digest(cfg, arch, augmented))
    logger.info("Arch %s: %.2f ± %.2f over %d seeds", report.arch, report.mean, report.std, report.seeds)
    return report


def baseline(
    real: RealDataset,
    test: RealDataset,
    ipc: int,
    kind: BaselineKind = "random",
    seeds: int = 1,
    arch: ArchDescriptor = ArchDescriptor(),
    augmented: bool = False,
    cfg: EvalConfig = EvalConfig(),
    jobs: int = 1,
) -> EvalReport:
    """Evaluate ``ipc`` real images per class chosen uniformly (``random``) or by greedy k-center."""
    validate_choice("baseline", kind, ("random", "k-center"))
    validate_positive("ipc", ipc)
    ids = select_indices(real, ipc, "k-center" if kind == "k-center" else "real-sample", make_generator(cfg.seed, "init"))
    return train_and_test((real.images[ids], real.labels[ids]), test, arch, seeds, augmented, cfg, jobs)


def cross_arch(
    data: TrainingData,
    test: RealDataset,
    archs: Iterable[ArchDescriptor],
    seeds: int = 1,
    augmented: bool = False,
    cfg: EvalConfig = EvalConfig(),
    jobs: int = 1,
) -> List[EvalReport]:
    """One :func:`train_and_test` report per architecture."""
    images, labels = training_tensors(data, test.images.dtype)
    return [train_and_test((images, labels), test, arch, seeds, augmented, cfg, jobs) for arch in archs]


def write_performance_csv(
    path: "os.PathLike[str]", rows: Iterable[Tuple[str, int, str, EvalReport]]
) -> Path:
    """Write (dataset, ipc, method, report) rows as the performance table."""
    path = Path(path)
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(PERFORMANCE_COLUMNS)
        for dataset, ipc, method, report in rows:
            writer.writerow((dataset, ipc, method, f"{report.mean:.2f}", f"{report.std:.2f}"))
    return path


def write_cross_arch_csv(
    path: "os.PathLike[str]", method: str, train_arch: str, reports: Iterable[EvalReport]
) -> Path:
    """Write the cross-architecture table, one row per evaluation architecture."""
    path = Path(path)
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(CROSS_ARCH_COLUMNS)
        for report in reports:
            writer.writerow((method, train_arch, report.arch, f"{report.mean:.2f}", f"{report.std:.2f}", report.seeds))
    return path
