"""On-disk trajectory store.

One directory per trajectory holding ``meta.json`` and one ``ckpt_<step>.bin`` blob per
checkpoint, laid out by :data:`distillkit._layouts.artifact.CHECKPOINT_LAYOUT`.
"""
from __future__ import annotations

import logging
import os
import shutil
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from construct import ConstructError  # type: ignore

from distillkit._layouts.artifact import CHECKPOINT_LAYOUT
from distillkit._utils.encoding import FriendlyJsonSerde
from distillkit.errors import FormatError, MissingArtifactError
from distillkit.types import TrajectoryMetadata

from .model import ArchDescriptor, NetworkSource, build_model
from .train import TrainConfig, Trajectory, train_steps

META_FILE = "meta.json"


def encode_checkpoint(step: int, params: torch.Tensor) -> bytes:
    """Checkpoint blob of a flat vector, stored as little-endian float32."""
    data = params.detach().cpu().numpy().astype("<f4")
    return CHECKPOINT_LAYOUT.build(dict(step=step, count=data.size, data=data.tobytes()))


def decode_checkpoint(raw: bytes) -> Tuple[int, torch.Tensor]:
    """Inverse of :func:`encode_checkpoint`."""
    try:
        parsed = CHECKPOINT_LAYOUT.parse(raw)
    except ConstructError as err:
        raise FormatError(f"malformed checkpoint blob: {err}", offset=getattr(err, "offset", 0) or 0) from err
    values = np.frombuffer(parsed.data, dtype="<f4").astype(np.float32)
    return int(parsed.step), torch.from_numpy(values)


class TrajectoryStore(FriendlyJsonSerde):
    """Directory of recorded teacher trajectories."""

    logger = logging.getLogger("distillkit.nnkit.TrajectoryStore")

    def __init__(self, root: "os.PathLike[str]") -> None:
        """Init TrajectoryStore."""
        self.root = Path(root)
        self._cache: Dict[Path, Trajectory] = {}

    def __str__(self) -> str:
        """String definition for TrajectoryStore."""
        return f"trajectory store {self.root}"

    def paths(self) -> List[Path]:
        """Trajectory directories, sorted by name."""
        if not self.root.is_dir():
            return []
        return sorted(path for path in self.root.iterdir() if (path / META_FILE).is_file())

    def __len__(self) -> int:
        """Number of stored trajectories."""
        return len(self.paths())

    def save(self, trajectory: Trajectory, name: str) -> Path:
        """Write one trajectory under ``root/name``."""
        directory = self.root / name
        directory.mkdir(parents=True, exist_ok=True)
        config = trajectory.train_config
        meta = TrajectoryMetadata(
            arch=trajectory.arch.to_document(),
            lr=config.lr,
            steps=config.steps,
            batch_size=config.batch_size,
            momentum=config.momentum,
            loss=config.loss,
            snapshots=trajectory.steps,
            seed=config.seed,
        )
        for step, params in trajectory.checkpoints:
            (directory / f"ckpt_{step:06d}.bin").write_bytes(encode_checkpoint(step, params))
        self.write_document(directory / META_FILE, meta)
        return directory

    def load(self, directory: "os.PathLike[str]") -> Trajectory:
        """Read one trajectory directory."""
        directory = Path(directory)
        if directory in self._cache:
            return self._cache[directory]
        if not (directory / META_FILE).is_file():
            raise MissingArtifactError("trajectory", str(directory))
        meta = self.read_document(directory / META_FILE)
        checkpoints = []
        for step in meta["snapshots"]:
            blob = directory / f"ckpt_{step:06d}.bin"
            if not blob.is_file():
                raise MissingArtifactError("trajectory checkpoint", str(blob))
            stored_step, params = decode_checkpoint(blob.read_bytes())
            if stored_step != step:
                raise FormatError(f"checkpoint {blob.name} records step {stored_step}", offset=4)
            checkpoints.append((step, params))
        config = TrainConfig(
            steps=meta["steps"],
            lr=meta["lr"],
            momentum=meta.get("momentum", 0.0),
            loss=meta.get("loss", "cross-entropy"),
            batch_size=meta["batch_size"],
            seed=meta["seed"],
        )
        trajectory = Trajectory(ArchDescriptor.from_document(meta["arch"]), tuple(checkpoints), config)
        trajectory.validate()
        self._cache[directory] = trajectory
        return trajectory

    def load_all(self) -> List[Trajectory]:
        """Every stored trajectory."""
        paths = self.paths()
        if not paths:
            raise MissingArtifactError("trajectory store", str(self.root))
        return [self.load(path) for path in paths]

    def sample(self, generator: torch.Generator) -> Trajectory:
        """A stored trajectory drawn uniformly."""
        paths = self.paths()
        if not paths:
            raise MissingArtifactError("trajectory store", str(self.root))
        index = int(torch.randint(len(paths), (1,), generator=generator).item())
        return self.load(paths[index])


def record_teachers(
    images: torch.Tensor,
    targets: torch.Tensor,
    arch: ArchDescriptor,
    config: TrainConfig,
    count: int,
    root: "os.PathLike[str]",
    source: Optional[NetworkSource] = None,
) -> TrajectoryStore:
    """Train ``count`` teachers on real data and store their trajectories.

    Teacher ``k`` starts from a fresh network seeded with ``config.seed + k`` and draws its
    mini-batches from the same seed. A failed write removes the partial trajectory directory.
    """
    source = source or NetworkSource()
    store = TrajectoryStore(root)
    for teacher in range(count):
        seed = config.seed + teacher
        model = build_model(arch, source, seed=seed)
        _, trajectory = train_steps(model, (images, targets), config._replace(seed=seed), record=True)
        name = f"teacher_{teacher:03d}"
        try:
            store.save(trajectory, name)
        except OSError as err:
            store.logger.error("Failed to write trajectory %s: %s", name, err)
            shutil.rmtree(store.root / name, ignore_errors=True)
            raise
        store.logger.info("Recorded teacher %d/%d with %d checkpoints", teacher + 1, count, len(trajectory))
    return store
