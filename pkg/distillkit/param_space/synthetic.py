"""Synthetic-dataset parameterizations and storage-budget accounting.

A :class:`SyntheticDataset` stores codes and mapper parameters; :func:`materialize` maps them
to training-ready images with a differentiable function:

* ``raw``: the codes are the images.
* ``upsample``: low-resolution codes upsampled by an integer factor.
* ``memory``: ``x_{c,j} = A_j[c] · φ``, rows of per-image addressing matrices times shared bases.
* ``hallucinator``: every decoder applied to every code, ``|Z|·|Φ|`` images.
"""
from __future__ import annotations

import math
from typing import Dict, NamedTuple, Optional, Tuple

import torch
import torch.nn.functional as F
from typing_extensions import Literal

from distillkit.data import InitStrategy, RealDataset, init_synthetic
from distillkit.errors import ConfigurationError
from distillkit.labels import LabelStore, init_labels
from distillkit.nnkit.model import ModelState
from distillkit.types import LabelMode, ParamKind
from distillkit.utils.helpers import make_generator
from distillkit.utils.validate import validate_choice, validate_positive

from .augment import DSAConfig

PARAM_KINDS = ("raw", "upsample", "memory", "hallucinator")

MEMORY_INIT_NOISE = 0.01
"""Std of the noise added to the one-hot initial addressing rows."""


class ParamConfig(NamedTuple):
    """Parameterization settings."""

    kind: ParamKind = "raw"
    """``raw``, ``upsample``, ``memory`` or ``hallucinator``."""
    factor: int = 2
    """Upsampling factor; ``upsample`` stores factor² images per raw image of budget."""
    upsample_mode: Literal["bilinear", "nearest"] = "bilinear"
    """Upsampling interpolation."""
    bases: int = 0
    """Number K of shared memory bases; 0 uses one per class."""
    addresses: int = 0
    """Addressing matrices R per class; 0 uses ipc."""
    codes_per_class: int = 0
    """Hallucinator codes per class; 0 uses ipc."""
    decoders: int = 2
    """Number of hallucinator decoders |Φ|."""
    decoder_width: int = 8
    """Hidden channels h of every decoder."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        validate_choice("parameterization", self.kind, PARAM_KINDS)
        validate_choice("upsample mode", self.upsample_mode, ("bilinear", "nearest"))
        validate_positive("factor", self.factor)
        validate_positive("decoders", self.decoders)
        validate_positive("decoder_width", self.decoder_width)
        for name in ("bases", "addresses", "codes_per_class"):
            validate_positive(name, getattr(self, name), strict=False)


class SyntheticDataset:
    """Learnable synthetic dataset: codes z, mapper parameters φ and labels.

    Stored tensors mutate only inside the engine's update step.
    """

    def __init__(
        self,
        config: ParamConfig,
        codes: Dict[str, torch.Tensor],
        mapper: Dict[str, torch.Tensor],
        labels: LabelStore,
        classes: torch.Tensor,
        image_shape: Tuple[int, int, int],
        augment: Optional[DSAConfig] = None,
    ) -> None:
        """Init SyntheticDataset."""
        self.config = config
        self.codes = codes
        self.mapper = mapper
        self.labels = labels
        self.classes = classes
        self.image_shape = tuple(image_shape)
        self.augment = augment

    @property
    def kind(self) -> ParamKind:
        """Parameterization kind."""
        return self.config.kind

    @property
    def num_images(self) -> int:
        """Materialized image count M."""
        return int(self.classes.numel())

    @property
    def num_classes(self) -> int:
        """Number of classes C."""
        return int(self.labels.values.shape[1])

    def learnables(self) -> Dict[str, torch.Tensor]:
        """Every tensor the engine optimizes, keyed ``codes.*``, ``mapper.*`` or ``labels.values``."""
        tensors = {f"codes.{name}": value for name, value in self.codes.items()}
        tensors.update({f"mapper.{name}": value for name, value in self.mapper.items()})
        if self.labels.learnable:
            tensors["labels.values"] = self.labels.values
        return tensors

    def stored(self) -> Dict[str, torch.Tensor]:
        """Every tensor of the artifact, learnable or not."""
        tensors = {f"codes.{name}": value for name, value in self.codes.items()}
        tensors.update({f"mapper.{name}": value for name, value in self.mapper.items()})
        tensors["labels.values"] = self.labels.values
        tensors["classes"] = self.classes.to(self.labels.values.dtype)
        return tensors

    def requires_grad_(self, flag: bool = True) -> SyntheticDataset:
        """Mark every learnable tensor."""
        for value in self.learnables().values():
            value.requires_grad_(flag)
        return self


def _decode(codes: torch.Tensor, mapper: Dict[str, torch.Tensor]) -> torch.Tensor:
    """Apply every decoder to every code; output j·|Φ|+k is decoder k on code j."""
    outputs = []
    for code in codes:
        batch = code.unsqueeze(0)
        for k in range(mapper["w1"].shape[0]):
            hidden = F.conv_transpose2d(batch, mapper["w1"][k], mapper["b1"][k], padding=1)
            hidden = torch.tanh(hidden * mapper["style_scale"][k].view(1, -1, 1, 1) + mapper["style_shift"][k].view(1, -1, 1, 1))
            outputs.append(batch + F.conv_transpose2d(hidden, mapper["w2"][k], mapper["b2"][k], padding=1))
    return torch.cat(outputs) if outputs else codes[:0]


def materialize(synthetic: SyntheticDataset) -> Tuple[torch.Tensor, torch.Tensor]:
    """Training-ready images X_s and labels Y_s, differentiable w.r.t. every stored tensor."""
    kind = synthetic.kind
    channels, height, width = synthetic.image_shape
    if kind == "raw":
        images = synthetic.codes["images"]
    elif kind == "upsample":
        codes = synthetic.codes["images"]
        if synthetic.config.factor == 1:
            images = codes
        elif synthetic.config.upsample_mode == "nearest":
            images = F.interpolate(codes, size=(height, width), mode="nearest")
        else:
            images = F.interpolate(codes, size=(height, width), mode="bilinear", align_corners=False)
    elif kind == "memory":
        addresses, bases = synthetic.codes["addresses"], synthetic.mapper["bases"]
        # addresses: C×R×K, bases: K×D; image (c, j) is row c of A_j times the bases
        images = torch.einsum("crk,kd->crd", addresses, bases).reshape(-1, channels, height, width)
    elif kind == "hallucinator":
        images = _decode(synthetic.codes["images"], synthetic.mapper)
    else:
        raise ConfigurationError(f"unknown parameterization {kind!r}")
    if images.shape[0] != synthetic.num_images or tuple(images.shape[1:]) != synthetic.image_shape:
        raise ConfigurationError(
            f"{kind} parameterization produced {tuple(images.shape)}, expected "
            f"({synthetic.num_images}, {', '.join(map(str, synthetic.image_shape))})"
        )
    return images, synthetic.labels.values


def _class_major(classes: int, per_class: int) -> torch.Tensor:
    return torch.arange(classes).repeat_interleave(per_class)


def build_synthetic(
    real: RealDataset,
    ipc: int,
    config: ParamConfig = ParamConfig(),
    init: InitStrategy = InitStrategy(),
    label_mode: LabelMode = "fixed-onehot",
    teacher: Optional[ModelState] = None,
    augment: Optional[DSAConfig] = None,
) -> SyntheticDataset:
    """Initialize a synthetic dataset of ``real``'s shape.

    Codes start from :func:`distillkit.data.init_synthetic`: ``upsample`` stores
    ``ipc·factor²`` average-pooled images per class, ``memory`` starts its bases from real
    samples and its addressing rows near one-hot, ``hallucinator`` starts its codes like raw
    images and its decoders near the identity.
    """
    config.validate()
    num_classes = real.num_classes
    channels, height, width = real.image_shape
    generator = make_generator(init.seed, "init")
    mapper: Dict[str, torch.Tensor] = {}

    if config.kind == "raw":
        codes = {"images": init_synthetic(real, ipc, init)}
        classes = _class_major(num_classes, ipc)
    elif config.kind == "upsample":
        factor = config.factor
        if height % factor or width % factor:
            raise ConfigurationError(f"image size {height}×{width} is not divisible by factor {factor}")
        per_class = ipc * factor * factor
        full = init_synthetic(real, per_class, init)
        codes = {"images": F.avg_pool2d(full, factor) if factor > 1 else full}
        classes = _class_major(num_classes, per_class)
    elif config.kind == "memory":
        bases = config.bases or num_classes
        addresses = config.addresses or ipc
        per_class = math.ceil(bases / num_classes)
        samples = init_synthetic(real, per_class, init).flatten(1)
        # basis k starts from sample k // C of class k % C
        order = [(k % num_classes) * per_class + k // num_classes for k in range(bases)]
        mapper = {"bases": samples[order].clone()}
        onehot = F.one_hot(torch.arange(num_classes) % bases, bases).to(samples.dtype)
        noise = MEMORY_INIT_NOISE * torch.randn(num_classes, addresses, bases, generator=generator, dtype=samples.dtype)
        codes = {"addresses": onehot.unsqueeze(1) + noise}
        classes = _class_major(num_classes, addresses)
    else:
        per_class = config.codes_per_class or ipc
        images = init_synthetic(real, per_class, init)
        hidden, count = config.decoder_width, config.decoders
        dtype = images.dtype
        std1 = 1.0 / math.sqrt(channels * 9)
        std2 = 0.1 / math.sqrt(hidden * 9)
        codes = {"images": images}
        mapper = {
            "w1": std1 * torch.randn(count, channels, hidden, 3, 3, generator=generator, dtype=dtype),
            "b1": torch.zeros(count, hidden, dtype=dtype),
            "style_scale": torch.ones(count, hidden, dtype=dtype),
            "style_shift": 0.1 * torch.randn(count, hidden, generator=generator, dtype=dtype),
            "w2": std2 * torch.randn(count, hidden, channels, 3, 3, generator=generator, dtype=dtype),
            "b2": torch.zeros(count, channels, dtype=dtype),
        }
        classes = _class_major(num_classes, per_class).repeat_interleave(count)

    if classes.numel() >= len(real):
        raise ConfigurationError(f"synthetic set of {classes.numel()} images is not smaller than the real set ({len(real)})")
    placeholder = LabelStore("fixed-onehot", F.one_hot(classes, num_classes).to(real.images.dtype))
    synthetic = SyntheticDataset(config, codes, mapper, placeholder, classes, real.image_shape, augment)
    images = materialize(synthetic)[0] if label_mode == "teacher-soft" else None
    synthetic.labels = init_labels(label_mode, classes, num_classes, teacher, images)
    return synthetic.requires_grad_(True)


class BudgetSummary(NamedTuple):
    """Stored-float accounting of a synthetic dataset."""

    codes: int
    """Floats in the codes z."""
    mapper: int
    """Floats in the mapper parameters φ."""
    labels: int
    """Floats in learnable labels (0 otherwise)."""
    total: int
    """codes + mapper + labels."""
    total_without_labels: int
    """codes + mapper."""
    ipc_equivalent: float
    """total_without_labels expressed in raw images per class, ``/ (C·D)``."""


def float_budget(synthetic: SyntheticDataset) -> int:
    """Stored reals: codes + mapper + learnable labels.

    Raw ipc-k storage equals k·C·D (+ k·C·C with learnable labels).
    """
    return budget_summary(synthetic).total


def budget_summary(synthetic: SyntheticDataset) -> BudgetSummary:
    """Budget split between codes, mapper and labels."""
    codes = sum(int(value.numel()) for value in synthetic.codes.values())
    mapper = sum(int(value.numel()) for value in synthetic.mapper.values())
    labels = synthetic.labels.float_count
    image_floats = math.prod(synthetic.image_shape)
    return BudgetSummary(
        codes=codes,
        mapper=mapper,
        labels=labels,
        total=codes + mapper + labels,
        total_without_labels=codes + mapper,
        ipc_equivalent=(codes + mapper) / (synthetic.num_classes * image_floats),
    )
