"""Functional classification networks over a flat parameter vector.

A network is an :class:`ArchDescriptor` plus one flat vector θ; :func:`forward` slices θ into
layers on every call, so gradients flow to both the parameters and the input pixels and any
vector of the right length can be evaluated without building a module.
"""
from __future__ import annotations

import math
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import torch
import torch.nn.functional as F
from typing_extensions import Literal

from distillkit.errors import ArgumentError
from distillkit.types import LossKind
from distillkit.utils.helpers import make_generator
from distillkit.utils.validate import validate_choice, validate_positive

Family = Literal["convnet", "mlp"]
"""Network family."""

NormKind = Literal["none", "instance", "batch"]
"""Normalization layer after every convolution (or hidden linear layer)."""

InitScheme = Literal["kaiming", "xavier", "normal"]
"""Weight initialization scheme."""

SourceKind = Literal["fresh-random", "snapshot-cache", "teacher-checkpoint"]
"""How networks are fetched during distillation."""

NORM_EPS = 1e-5
"""Variance guard of the normalization layers."""

NORMAL_INIT_STD = 0.01
"""Standard deviation of the ``normal`` init scheme."""

FAMILIES = ("convnet", "mlp")
NORMS = ("none", "instance", "batch")
INIT_SCHEMES = ("kaiming", "xavier", "normal")
SOURCE_KINDS = ("fresh-random", "snapshot-cache", "teacher-checkpoint")


class ArchDescriptor(NamedTuple):
    """Network architecture.

    Blocks are conv3×3 → norm → ReLU → 2×2 average pooling for ``convnet`` (pooling is skipped
    once either spatial side reaches 1) and linear → norm → ReLU for ``mlp``. A linear
    classifier follows the last block.
    """

    family: Family = "convnet"
    """``convnet`` or ``mlp``."""
    depth: int = 3
    """Number of blocks."""
    width: int = 128
    """Channels (convnet) or hidden units (mlp) per block."""
    norm: NormKind = "instance"
    """``none``, ``instance`` or ``batch``. Batch norm always uses batch statistics."""
    in_shape: Tuple[int, int, int] = (1, 28, 28)
    """Input C_in, H, W."""
    num_classes: int = 10
    """Number of logits."""

    @property
    def id(self) -> str:
        """Short identifier, e.g. ``convnet-d3-w128-instance``."""
        return f"{self.family}-d{self.depth}-w{self.width}-{self.norm}"

    @classmethod
    def from_id(cls, arch_id: str, in_shape: Tuple[int, int, int], num_classes: int) -> ArchDescriptor:
        """Parse an identifier produced by :attr:`id`.

        >>> ArchDescriptor.from_id("mlp-d2-w16-none", (1, 2, 2), 3).width
        16
        """
        try:
            family, depth, width, norm = arch_id.split("-")
            arch = cls(family, int(depth[1:]), int(width[1:]), norm, tuple(in_shape), num_classes)  # type: ignore
        except ValueError as err:
            raise ArgumentError(f"malformed architecture id {arch_id!r}; expected family-dN-wN-norm") from err
        arch.validate()
        return arch

    def validate(self) -> None:
        """Check the descriptor, raising :class:`ArgumentError`."""
        validate_choice("network family", self.family, FAMILIES)
        validate_choice("norm", self.norm, NORMS)
        validate_positive("depth", self.depth)
        validate_positive("width", self.width)
        if self.family == "mlp" and self.norm == "instance":
            raise ArgumentError("mlp networks support norm 'none' or 'batch'")
        if len(self.in_shape) != 3 or min(self.in_shape) < 1:
            raise ArgumentError(f"in_shape must be (C, H, W), got {self.in_shape}")
        if self.num_classes < 2:
            raise ArgumentError(f"num_classes must be >= 2, got {self.num_classes}")

    def to_document(self) -> Dict[str, Any]:
        """JSON-ready representation."""
        return {**self._asdict(), "in_shape": list(self.in_shape)}

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> ArchDescriptor:
        """Inverse of :meth:`to_document`."""
        return cls(**{**doc, "in_shape": tuple(doc["in_shape"])})

    def block_shapes(self) -> List[Tuple[int, ...]]:
        """Per-sample output shape of every block."""
        shapes: List[Tuple[int, ...]] = []
        _, height, width = self.in_shape
        for _ in range(self.depth):
            if self.family == "mlp":
                shapes.append((self.width,))
                continue
            if height > 1 and width > 1:
                height, width = height // 2, width // 2
            shapes.append((self.width, height, width))
        return shapes

    @property
    def embedding_dim(self) -> int:
        """Length of the flattened last block output."""
        return math.prod(self.block_shapes()[-1])


class LayerSpec(NamedTuple):
    """Placement of one parameter tensor inside θ."""

    name: str
    """Tensor name, e.g. ``conv0.weight`` or ``classifier.bias``."""
    offset: int
    """First index in θ."""
    shape: Tuple[int, ...]
    """Tensor shape; dim 0 indexes output channels."""

    @property
    def numel(self) -> int:
        """Number of entries."""
        return math.prod(self.shape)

    def channel_slices(self) -> List[slice]:
        """Slices of θ holding each output channel. Vectors (biases, norm scales) form one group."""
        if len(self.shape) == 1:
            return [slice(self.offset, self.offset + self.numel)]
        per_channel = self.numel // self.shape[0]
        return [
            slice(self.offset + channel * per_channel, self.offset + (channel + 1) * per_channel)
            for channel in range(self.shape[0])
        ]


def layer_map(arch: ArchDescriptor) -> Tuple[LayerSpec, ...]:
    """Tile θ with the parameter tensors of ``arch``, in forward order."""
    shapes: List[Tuple[str, Tuple[int, ...]]] = []
    in_channels = arch.in_shape[0] if arch.family == "convnet" else math.prod(arch.in_shape)
    for block in range(arch.depth):
        if arch.family == "convnet":
            shapes.append((f"conv{block}.weight", (arch.width, in_channels, 3, 3)))
            shapes.append((f"conv{block}.bias", (arch.width,)))
        else:
            shapes.append((f"fc{block}.weight", (arch.width, in_channels)))
            shapes.append((f"fc{block}.bias", (arch.width,)))
        if arch.norm != "none":
            shapes.append((f"norm{block}.weight", (arch.width,)))
            shapes.append((f"norm{block}.bias", (arch.width,)))
        in_channels = arch.width
    shapes.append(("classifier.weight", (arch.num_classes, arch.embedding_dim)))
    shapes.append(("classifier.bias", (arch.num_classes,)))

    specs: List[LayerSpec] = []
    offset = 0
    for name, shape in shapes:
        specs.append(LayerSpec(name, offset, shape))
        offset += math.prod(shape)
    return tuple(specs)


class ModelState(NamedTuple):
    """Architecture plus flat parameter vector θ."""

    arch: ArchDescriptor
    """Architecture."""
    params: torch.Tensor
    """Flat parameter vector θ."""
    layer_map: Tuple[LayerSpec, ...]
    """Placement of every tensor inside θ; tiles θ exactly."""

    @property
    def num_params(self) -> int:
        """Length of θ."""
        return int(self.params.numel())

    def tensors(self, params: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
        """Views of θ (or of ``params``) shaped per layer."""
        flat = self.params if params is None else params
        return {spec.name: flat[spec.offset : spec.offset + spec.numel].view(spec.shape) for spec in self.layer_map}

    def with_params(self, params: torch.Tensor) -> ModelState:
        """Same architecture with a new θ."""
        if params.shape != self.params.shape:
            raise ArgumentError(f"expected {self.num_params} parameters, got {tuple(params.shape)}")
        return self._replace(params=params)

    def detach(self) -> ModelState:
        """Copy with θ cut from any autograd graph."""
        return self._replace(params=self.params.detach().clone())


def check_layer_map(specs: Tuple[LayerSpec, ...], size: int) -> None:
    """Verify ``specs`` tile [0, size) without gaps or overlap."""
    offset = 0
    for spec in specs:
        if spec.offset != offset:
            raise ArgumentError(f"layer {spec.name} starts at {spec.offset}, expected {offset}")
        offset += spec.numel
    if offset != size:
        raise ArgumentError(f"layer map covers {offset} parameters, vector holds {size}")


def _init_tensor(
    name: str, shape: Tuple[int, ...], scheme: InitScheme, generator: torch.Generator, dtype: torch.dtype
) -> torch.Tensor:
    if name.startswith("norm"):
        return torch.ones(shape, dtype=dtype) if name.endswith("weight") else torch.zeros(shape, dtype=dtype)
    if name.endswith("bias"):
        return torch.zeros(shape, dtype=dtype)
    receptive = math.prod(shape[2:])
    fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    std = {
        "kaiming": math.sqrt(2.0 / fan_in),
        "xavier": math.sqrt(2.0 / (fan_in + fan_out)),
        "normal": NORMAL_INIT_STD,
    }[scheme]
    return torch.randn(shape, generator=generator, dtype=dtype) * std


class NetworkSource(NamedTuple):
    """Where the networks of a distillation run come from."""

    kind: SourceKind = "fresh-random"
    """``fresh-random``, ``snapshot-cache`` or ``teacher-checkpoint``."""
    init_scheme: InitScheme = "kaiming"
    """Init scheme of fresh networks."""
    pool_size: int = 1
    """Capacity of the snapshot cache."""
    seed: int = 0
    """Seed of fresh networks drawn outside an engine run."""
    refresh_every: int = 0
    """Replace the oldest cached network every this many fetches; 0 never refreshes."""
    epoch_range: Tuple[int, int] = (0, 0)
    """Inclusive window of checkpoint positions a teacher start is drawn from."""

    def validate(self) -> None:
        """Check the source, raising :class:`ArgumentError`."""
        validate_choice("network source", self.kind, SOURCE_KINDS)
        validate_choice("init scheme", self.init_scheme, INIT_SCHEMES)
        validate_positive("pool_size", self.pool_size)
        validate_positive("refresh_every", self.refresh_every, strict=False)
        low, high = self.epoch_range
        if not 0 <= low <= high:
            raise ArgumentError(f"epoch_range must satisfy 0 <= low <= high, got {self.epoch_range}")


def build_model(
    arch: ArchDescriptor,
    source: NetworkSource = NetworkSource(),
    seed: Optional[int] = None,
    dtype: Optional[torch.dtype] = None,
) -> ModelState:
    """Draw a fresh network.

    Weights follow ``source.init_scheme``; biases and norm shifts start at 0, norm scales at 1.

    :param arch: Architecture.
    :param source: Network source carrying the init scheme.
    :param seed: Seed of this draw; defaults to ``source.seed``.
    :param dtype: Parameter dtype; defaults to the torch default dtype.

    >>> model = build_model(ArchDescriptor("mlp", 1, 4, "none", (1, 2, 2), 3))
    >>> model.num_params == sum(spec.numel for spec in model.layer_map)
    True
    """
    arch.validate()
    validate_choice("init scheme", source.init_scheme, INIT_SCHEMES)
    dtype = dtype or torch.get_default_dtype()
    generator = make_generator(source.seed if seed is None else seed, "network")
    specs = layer_map(arch)
    params = torch.cat(
        [_init_tensor(spec.name, spec.shape, source.init_scheme, generator, dtype).flatten() for spec in specs]
    )
    return ModelState(arch=arch, params=params, layer_map=specs)


def _normalize(x: torch.Tensor, kind: NormKind, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        dims: Tuple[int, ...] = (0,)
    else:
        dims = (2, 3) if kind == "instance" else (0, 2, 3)
    mean = x.mean(dim=dims, keepdim=True)
    var = (x - mean).pow(2).mean(dim=dims, keepdim=True)
    shape = (1, -1) + (1,) * (x.dim() - 2)
    return (x - mean) / torch.sqrt(var + NORM_EPS) * weight.view(shape) + bias.view(shape)


def forward(
    model: ModelState, batch: torch.Tensor, params: Optional[torch.Tensor] = None
) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Run the network on ``batch``.

    :param model: Network; its θ is used unless ``params`` is given.
    :param batch: N×C_in×H×W images.
    :param params: Optional replacement θ, typically a graph-carrying vector.
    :return: Every block output (post-activation, post-pooling) and the N×C logits.
    """
    arch = model.arch
    if tuple(batch.shape[1:]) != tuple(arch.in_shape):
        raise ArgumentError(f"batch shape {tuple(batch.shape[1:])} does not match network input {arch.in_shape}")
    tensors = model.tensors(params)
    features: List[torch.Tensor] = []
    x = batch if arch.family == "convnet" else batch.flatten(1)
    for block in range(arch.depth):
        if arch.family == "convnet":
            x = F.conv2d(x, tensors[f"conv{block}.weight"], tensors[f"conv{block}.bias"], padding=1)
        else:
            x = F.linear(x, tensors[f"fc{block}.weight"], tensors[f"fc{block}.bias"])
        if arch.norm != "none":
            x = _normalize(x, arch.norm, tensors[f"norm{block}.weight"], tensors[f"norm{block}.bias"])
        x = F.relu(x)
        if x.dim() == 4 and x.shape[2] > 1 and x.shape[3] > 1:
            x = F.avg_pool2d(x, 2)
        features.append(x)
    logits = F.linear(x.flatten(1), tensors["classifier.weight"], tensors["classifier.bias"])
    return features, logits


def embed(model: ModelState, batch: torch.Tensor, params: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Flattened last block output, the network without its classifier."""
    features, _ = forward(model, batch, params)
    return features[-1].flatten(1)


def training_loss(logits: torch.Tensor, targets: torch.Tensor, kind: LossKind = "cross-entropy") -> torch.Tensor:
    """Mean training loss against one-hot or soft N×C targets.

    ``cross-entropy`` is ``-(Y · log_softmax(logits)).sum(1).mean()``; ``mse`` is
    ``0.5 · mean_i ‖logits_i − y_i‖²``.

    >>> training_loss(torch.zeros(1, 2), torch.tensor([[1.0, 0.0]]), "mse").item()
    0.5
    """
    if kind == "mse":
        return 0.5 * (logits - targets).pow(2).sum(dim=1).mean()
    if kind == "cross-entropy":
        return -(targets * F.log_softmax(logits, dim=1)).sum(dim=1).mean()
    raise ArgumentError(f"unknown loss {kind!r}; expected cross-entropy or mse")


def model_loss(
    model: ModelState,
    images: torch.Tensor,
    targets: torch.Tensor,
    kind: LossKind = "cross-entropy",
    params: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Training loss of the network on (images, targets)."""
    _, logits = forward(model, images, params)
    return training_loss(logits, targets, kind)
