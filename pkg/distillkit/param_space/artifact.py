"""Synthetic artifact files.

An artifact is a metadata document followed by named float32 tensors, laid out by
:data:`distillkit._layouts.artifact.ARTIFACT_LAYOUT`. Equal datasets give equal bytes.

Tensors are always stored as float32. A float64 dataset is rounded on save, which is logged,
and its dtype is kept in ``options.source_dtype``; loading gives float32 tensors.
"""
from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from construct import ConstructError  # type: ignore

from distillkit._layouts.artifact import ARTIFACT_LAYOUT, ARTIFACT_VERSION
from distillkit._utils.encoding import FriendlyJsonSerde
from distillkit.errors import FormatError, MissingArtifactError
from distillkit.labels import LabelStore
from distillkit.types import ArtifactMetadata, Digest, TensorMeta
from distillkit.utils.helpers import digest

from .augment import DSAConfig
from .synthetic import ParamConfig, SyntheticDataset, budget_summary

logger = logging.getLogger("distillkit.param_space")

_serde = FriendlyJsonSerde()


def _tensor_entry(name: str, value: torch.Tensor) -> Dict[str, Any]:
    data = value.detach().cpu().numpy().astype("<f4")
    return dict(name=name, ndim=data.ndim, shape=list(data.shape), data=data.tobytes())


def encode_artifact(
    synthetic: SyntheticDataset,
    dataset: str,
    seed: int = 0,
    objective: str = "",
    extra: Optional[Dict[str, Any]] = None,
) -> bytes:
    """Artifact bytes of a synthetic dataset."""
    tensors = synthetic.stored()
    source_dtype = ",".join(sorted({str(value.dtype).replace("torch.", "") for value in tensors.values()}))
    if source_dtype != "float32":
        logger.warning("Rounding %s synthetic tensors to float32 for the %s artifact", source_dtype, dataset)
    metadata = ArtifactMetadata(
        version=ARTIFACT_VERSION,
        kind=synthetic.kind,
        dataset=dataset,
        ipc_equivalent=budget_summary(synthetic).ipc_equivalent,
        shapes=[TensorMeta(name=name, shape=list(value.shape)) for name, value in tensors.items()],
        seed=seed,
        objective=objective,
        label_mode=synthetic.labels.mode,
        options={
            "param": synthetic.config,
            "image_shape": list(synthetic.image_shape),
            "augment": synthetic.augment,
            "source_dtype": source_dtype,
            **(extra or {}),
        },
    )
    return ARTIFACT_LAYOUT.build(
        dict(
            version=ARTIFACT_VERSION,
            metadata=_serde.json_encode(metadata),
            tensors=[_tensor_entry(name, value) for name, value in tensors.items()],
        )
    )


def save_artifact(
    synthetic: SyntheticDataset,
    path: "os.PathLike[str]",
    dataset: str,
    seed: int = 0,
    objective: str = "",
    extra: Optional[Dict[str, Any]] = None,
) -> Digest:
    """Write the artifact atomically and return its digest."""
    raw = encode_artifact(synthetic, dataset, seed, objective, extra)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(raw)
    os.replace(tmp, path)
    return digest(raw)


def decode_artifact(raw: bytes) -> Tuple[ArtifactMetadata, Dict[str, torch.Tensor]]:
    """Metadata and tensors of artifact bytes."""
    try:
        parsed = ARTIFACT_LAYOUT.parse(raw)
    except ConstructError as err:
        raise FormatError(f"malformed synthetic artifact: {err}", offset=0) from err
    if parsed.version != ARTIFACT_VERSION:
        raise FormatError(f"unsupported artifact version {parsed.version}", offset=4)
    metadata = _serde.json_decode(parsed.metadata)
    tensors = {}
    for entry in parsed.tensors:
        values = np.frombuffer(entry.data, dtype="<f4").astype(np.float32).reshape(list(entry.shape))
        tensors[entry.name] = torch.from_numpy(values)
    return metadata, tensors  # type: ignore


def load_artifact(path: "os.PathLike[str]") -> Tuple[SyntheticDataset, ArtifactMetadata]:
    """Read an artifact back into a synthetic dataset (float32 tensors)."""
    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError("synthetic artifact", str(path))
    metadata, tensors = decode_artifact(path.read_bytes())
    options = metadata["options"]
    param = options["param"]
    augment = options.get("augment")
    label_mode = metadata["label_mode"]
    labels = tensors["labels.values"]
    if label_mode == "learnable":
        labels.requires_grad_(True)
    synthetic = SyntheticDataset(
        config=ParamConfig(**param),
        codes={name[len("codes.") :]: value for name, value in tensors.items() if name.startswith("codes.")},
        mapper={name[len("mapper.") :]: value for name, value in tensors.items() if name.startswith("mapper.")},
        labels=LabelStore(label_mode, labels),
        classes=tensors["classes"].long(),
        image_shape=tuple(options["image_shape"]),  # type: ignore
        augment=DSAConfig(**{**augment, "ops": tuple(augment["ops"])}) if augment else None,
    )
    return synthetic.requires_grad_(True), metadata
