"""Distillation run configuration, presets and the support matrix."""
from __future__ import annotations

from typing import Any, Dict, NamedTuple, Optional

from distillkit.errors import ConfigurationError
from distillkit.nnkit.model import ArchDescriptor, NetworkSource
from distillkit.objectives.dist import DistMatchConfig
from distillkit.objectives.param import GradMatchConfig, TrajMatchConfig
from distillkit.objectives.perf import KRRConfig, MetaConfig
from distillkit.param_space.augment import DSAConfig
from distillkit.param_space.synthetic import ParamConfig
from distillkit.types import InitKind, LabelMode, LossKind, NetUpdate, ObjectiveId, SynOptimizer
from distillkit.utils.validate import validate_choice, validate_positive, validate_range

OBJECTIVES = ("meta", "krr", "frepo", "grad-match", "traj-match", "dm", "cafe")
NET_UPDATES = ("on-syn", "on-real", "none")
SYN_OPTIMIZERS = ("sgd", "sgd-momentum", "adam")

SUPPORTED_LABELS: Dict[str, tuple] = {
    "meta": ("fixed-onehot", "learnable", "teacher-soft"),
    "krr": ("fixed-onehot", "learnable", "teacher-soft"),
    "frepo": ("fixed-onehot", "learnable", "teacher-soft"),
    "grad-match": ("fixed-onehot", "learnable", "teacher-soft"),
    "traj-match": ("fixed-onehot", "learnable", "teacher-soft"),
    "dm": ("fixed-onehot",),
    "cafe": ("fixed-onehot",),
}
"""Label modes each objective supports; distribution matching never reads Y_s.

Every parameterization works with every objective.
"""


class DistillConfig(NamedTuple):
    """Everything a distillation run needs besides the real dataset."""

    objective: ObjectiveId = "grad-match"
    """Objective id."""
    meta: MetaConfig = MetaConfig()
    """Settings of ``meta``."""
    krr: KRRConfig = KRRConfig()
    """Settings of ``krr`` and ``frepo``."""
    grad_match: GradMatchConfig = GradMatchConfig()
    """Settings of ``grad-match``."""
    traj_match: TrajMatchConfig = TrajMatchConfig()
    """Settings of ``traj-match``."""
    dist_match: DistMatchConfig = DistMatchConfig()
    """Settings of ``dm`` and ``cafe``."""
    param: ParamConfig = ParamConfig()
    """Synthetic parameterization."""
    dsa: Optional[DSAConfig] = None
    """Siamese augmentation; None disables it."""
    ipc: int = 1
    """Images per class of budget."""
    init: InitKind = "real-sample"
    """Initialization of the synthetic images."""
    label_mode: LabelMode = "fixed-onehot"
    """Label mode."""
    arch: ArchDescriptor = ArchDescriptor()
    """Architecture; input shape and class count are taken from the dataset."""
    source: NetworkSource = NetworkSource()
    """Where networks come from."""
    net_update: NetUpdate = "on-syn"
    """Data that trains the fetched network before the synthetic update."""
    net_steps: int = 1
    """Network training steps per outer iteration."""
    net_lr: float = 0.01
    """Network learning rate."""
    net_batch: int = 256
    """Real mini-batch size of ``on-real`` updates."""
    net_loss: LossKind = "cross-entropy"
    """Network training loss."""
    syn_optimizer: SynOptimizer = "sgd-momentum"
    """Optimizer of the synthetic tensors."""
    syn_lr: float = 0.1
    """Synthetic learning rate."""
    syn_momentum: float = 0.5
    """Momentum of ``sgd-momentum``."""
    real_per_class: int = 64
    """Real samples per class per iteration (capped by the class size)."""
    iterations: int = 1000
    """Outer iterations."""
    eval_every: int = 0
    """Write an intermediate artifact every this many iterations; 0 disables."""
    checkpoint_every: int = 100
    """Write a resumable checkpoint every this many iterations; 0 disables."""
    plateau_patience: int = 500
    """Stop when the best loss has not improved for this many iterations; 0 disables."""
    plateau_tol: float = 1e-4
    """Relative improvement that resets the plateau counter."""
    seed: int = 0
    """Root seed of every random stream."""
    trajectory_dir: Optional[str] = None
    """Trajectory store used by ``traj-match``, teacher checkpoints and teacher-soft labels."""

    def validate(self) -> None:
        """Check values and the support matrix, raising :class:`ConfigurationError`."""
        try:
            validate_choice("objective", self.objective, OBJECTIVES)
            validate_choice("network update", self.net_update, NET_UPDATES)
            validate_choice("synthetic optimizer", self.syn_optimizer, SYN_OPTIMIZERS)
            validate_positive("iterations", self.iterations)
            validate_positive("ipc", self.ipc)
            validate_positive("syn_lr", self.syn_lr, strict=False)
            validate_range("syn_momentum", self.syn_momentum, 0.0, 1.0)
            validate_positive("net_steps", self.net_steps, strict=False)
            validate_positive("net_lr", self.net_lr)
            validate_positive("real_per_class", self.real_per_class)
            self.param.validate()
            self.source.validate()
            if self.dsa is not None:
                self.dsa.validate()
        except ValueError as err:
            raise ConfigurationError(str(err)) from err
        if self.label_mode not in SUPPORTED_LABELS[self.objective]:
            raise ConfigurationError(
                f"label mode {self.label_mode} is not supported by objective {self.objective}; "
                f"supported combinations: {support_matrix()}"
            )
        needs_store = (
            self.objective == "traj-match"
            or self.source.kind == "teacher-checkpoint"
            or self.label_mode == "teacher-soft"
        )
        if needs_store and not self.trajectory_dir:
            raise ConfigurationError(
                f"objective {self.objective} with source {self.source.kind} and labels {self.label_mode} "
                "needs a trajectory store (trajectory_dir)"
            )

    def to_document(self) -> Dict[str, Any]:
        """JSON-ready representation with every default materialized."""
        return _to_document(self)

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> DistillConfig:
        """Inverse of :meth:`to_document`; missing keys take their defaults."""
        return _from_document(cls, doc)  # type: ignore


def _to_document(value: Any) -> Any:
    if hasattr(value, "_asdict"):
        return {key: _to_document(item) for key, item in value._asdict().items()}
    if isinstance(value, tuple):
        return [_to_document(item) for item in value]
    return value


_NESTED_OPTIONAL = {"dsa": DSAConfig}


def _from_document(cls: Any, doc: Dict[str, Any]) -> Any:
    values = {}
    for name, default in cls._field_defaults.items():
        if name not in doc:
            continue
        item = doc[name]
        nested = type(default) if hasattr(default, "_asdict") else _NESTED_OPTIONAL.get(name)
        if nested is not None and isinstance(item, dict):
            values[name] = _from_document(nested, item)
        elif isinstance(item, list):
            values[name] = tuple(item)
        else:
            values[name] = item
    return cls(**values)


def support_matrix() -> str:
    """Human-readable objective × label-mode support matrix."""
    return "; ".join(f"{objective}: {', '.join(modes)}" for objective, modes in SUPPORTED_LABELS.items())


_MATCHING = dict(syn_optimizer="sgd-momentum", syn_momentum=0.5)
_ADAPTIVE = dict(syn_optimizer="adam", syn_lr=0.01)
_DC_POOL = NetworkSource(kind="snapshot-cache", pool_size=1, refresh_every=10)
_TEACHER = NetworkSource(kind="teacher-checkpoint", epoch_range=(0, 2))

PRESETS: Dict[str, DistillConfig] = {
    "dd": DistillConfig(objective="meta", net_update="none", **_ADAPTIVE),
    "addmem": DistillConfig(
        objective="meta", param=ParamConfig(kind="memory"), label_mode="learnable", net_update="none", **_ADAPTIVE
    ),
    "kip": DistillConfig(objective="krr", label_mode="learnable", net_update="none", **_ADAPTIVE),
    "frepo": DistillConfig(
        objective="frepo",
        krr=KRRConfig(mode="frepo-pool"),
        label_mode="learnable",
        source=NetworkSource(kind="snapshot-cache", pool_size=10, refresh_every=10),
        net_update="on-syn",
        **_ADAPTIVE,
    ),
    "dc": DistillConfig(objective="grad-match", source=_DC_POOL, net_update="on-syn", syn_lr=0.1, **_MATCHING),
    "dsa": DistillConfig(
        objective="grad-match", dsa=DSAConfig(), source=_DC_POOL, net_update="on-syn", syn_lr=0.1, **_MATCHING
    ),
    "idc": DistillConfig(
        objective="grad-match",
        grad_match=GradMatchConfig(distance="euclidean"),
        param=ParamConfig(kind="upsample", factor=2),
        dsa=DSAConfig(),
        source=_DC_POOL,
        net_update="on-real",
        syn_lr=0.1,
        **_MATCHING,
    ),
    "dcc": DistillConfig(
        objective="grad-match",
        grad_match=GradMatchConfig(grouping="class-mean"),
        dsa=DSAConfig(),
        source=_DC_POOL,
        net_update="on-syn",
        syn_lr=0.1,
        **_MATCHING,
    ),
    "egm": DistillConfig(
        objective="grad-match",
        grad_match=GradMatchConfig(distance="cosine-plus-l2", grouping="combined", balance=1.0),
        source=_DC_POOL,
        net_update="on-syn",
        syn_lr=0.1,
        **_MATCHING,
    ),
    "mtt": DistillConfig(objective="traj-match", dsa=DSAConfig(), source=_TEACHER, net_update="none", syn_lr=100.0, **_MATCHING),
    "haba": DistillConfig(
        objective="traj-match",
        param=ParamConfig(kind="hallucinator"),
        dsa=DSAConfig(),
        source=_TEACHER,
        net_update="none",
        syn_lr=100.0,
        **_MATCHING,
    ),
    "tesla": DistillConfig(
        objective="traj-match",
        traj_match=TrajMatchConfig(memory_mode="accumulate"),
        dsa=DSAConfig(),
        label_mode="teacher-soft",
        source=_TEACHER,
        net_update="none",
        syn_lr=100.0,
        **_MATCHING,
    ),
    "dm": DistillConfig(objective="dm", dsa=DSAConfig(), net_update="none", syn_lr=1.0, **_MATCHING),
    "kfs": DistillConfig(
        objective="dm", param=ParamConfig(kind="hallucinator"), dsa=DSAConfig(), net_update="none", syn_lr=1.0, **_MATCHING
    ),
    "cafe": DistillConfig(
        objective="cafe",
        dist_match=DistMatchConfig(variant="cafe"),
        dsa=DSAConfig(),
        source=_DC_POOL,
        net_update="on-syn",
        syn_lr=0.1,
        **_MATCHING,
    ),
}
"""Method combinations of objective, network update, parameterization and label mode."""


def preset(name: str) -> DistillConfig:
    """Configuration of a named method.

    >>> preset("idc").net_update
    'on-real'
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; available presets: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]
