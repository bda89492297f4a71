"""Shared types."""
from typing import Any, Dict, List, NewType

from typing_extensions import Literal, TypedDict

ObjectiveId = Literal["meta", "krr", "frepo", "grad-match", "traj-match", "dm", "cafe"]
"""Identifier of a distillation objective."""

InitKind = Literal["noise", "real-sample", "k-center"]
"""How raw synthetic images are initialized."""

ParamKind = Literal["raw", "upsample", "memory", "hallucinator"]
"""Synthetic-data parameterization."""

LabelMode = Literal["fixed-onehot", "learnable", "teacher-soft"]
"""How synthetic labels are stored and learned."""

NetUpdate = Literal["on-syn", "on-real", "none"]
"""Which data trains the fetched network between synthetic updates."""

SynOptimizer = Literal["sgd", "sgd-momentum", "adam"]
"""Optimizer applied to the learnable synthetic tensors."""

LossKind = Literal["cross-entropy", "mse"]
"""Network training loss."""

Digest = NewType("Digest", str)
"""Base58 encoded sha256 digest."""


class TensorMeta(TypedDict):
    """Shape record of one tensor stored in an artifact."""

    name: str
    """Tensor name, e.g. ``codes.images``."""
    shape: List[int]
    """Tensor shape."""


class ArtifactMetadata(TypedDict, total=False):
    """Metadata document stored at the head of a synthetic artifact."""

    version: int
    """Artifact format version."""
    kind: ParamKind
    """Parameterization kind."""
    dataset: str
    """Name of the real dataset the artifact was distilled from."""
    ipc_equivalent: float
    """Float budget expressed in raw images per class."""
    shapes: List[TensorMeta]
    """Shapes of the stored tensors."""
    seed: int
    """Seed of the run that produced the artifact."""
    objective: str
    """Objective id."""
    label_mode: LabelMode
    """Label mode."""
    options: Dict[str, Any]
    """Parameterization options (factor, decoder width, image shape, ...)."""


class TrajectoryMetadata(TypedDict):
    """Metadata document of one recorded trajectory."""

    arch: Dict[str, Any]
    """Architecture descriptor document."""
    lr: float
    """Teacher learning rate."""
    steps: int
    """Total teacher steps."""
    batch_size: int
    """Teacher mini-batch size (0 for full batch)."""
    momentum: float
    """Teacher momentum."""
    loss: str
    """Teacher training loss."""
    snapshots: List[int]
    """Step index of every stored checkpoint."""
    seed: int
    """Seed of the teacher run."""


class RunManifest(TypedDict):
    """Record of one CLI command, sufficient to replay it."""

    command: str
    """Sub-command name."""
    config: Dict[str, Any]
    """Resolved configuration with all defaults materialized."""
    artifacts: Dict[str, str]
    """Artifact paths written by the command."""
    version: str
    """Toolkit version."""
    seed: int
    """Root seed."""
