"""Parameter matching: single-step gradient matching and multi-step trajectory matching."""
from __future__ import annotations

from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import torch
from typing_extensions import Literal

from distillkit.errors import ArgumentError, DegenerateTrajectoryError
from distillkit.nnkit.model import ModelState, model_loss
from distillkit.nnkit.train import Trajectory, descend
from distillkit.param_space.synthetic import SyntheticDataset, materialize
from distillkit.types import LossKind
from distillkit.utils.validate import validate_choice, validate_finite, validate_positive

from .common import (
    ObjectiveResult,
    class_members,
    detached_params,
    maybe_augment,
    sub_seed,
    synthetic_gradients,
)

DISTANCES = ("layerwise-cosine", "cosine-plus-l2", "euclidean")
GROUPINGS = ("per-class", "class-mean", "combined")


class GradMatchConfig(NamedTuple):
    """Gradient-matching settings."""

    distance: Literal["layerwise-cosine", "cosine-plus-l2", "euclidean"] = "layerwise-cosine"
    """Distance between two gradient sets."""
    grouping: Literal["per-class", "class-mean", "combined"] = "per-class"
    """Per-class distances, distance of class-mean gradients, or per-class + λ·class-mean."""
    balance: float = 0.0
    """λ of the combined grouping."""
    eps: float = 1e-12
    """Guard added to norm products."""
    loss: LossKind = "cross-entropy"
    """Network loss whose gradients are matched."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        validate_choice("gradient distance", self.distance, DISTANCES)
        validate_choice("grouping", self.grouping, GROUPINGS)
        validate_positive("balance", self.balance, strict=False)
        validate_positive("eps", self.eps)


class TrajMatchConfig(NamedTuple):
    """Trajectory-matching settings. Teacher distances count checkpoint positions."""

    student_steps: int = 10
    """Student updates T_s on the synthetic data."""
    teacher_steps: int = 2
    """Checkpoints T_t between the teacher start and target."""
    student_lr: float = 0.01
    """Student learning rate η."""
    epoch_range: Tuple[int, int] = (0, 2)
    """Inclusive window of start checkpoint positions."""
    memory_mode: Literal["unrolled", "accumulate"] = "unrolled"
    """Differentiate through the whole unroll, or accumulate exact per-step contributions."""
    loss: LossKind = "cross-entropy"
    """Student loss."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        validate_positive("student_steps", self.student_steps, strict=False)
        validate_positive("teacher_steps", self.teacher_steps)
        validate_positive("student_lr", self.student_lr)
        validate_choice("memory mode", self.memory_mode, ("unrolled", "accumulate"))
        low, high = self.epoch_range
        if not 0 <= low <= high:
            raise ArgumentError(f"epoch_range must satisfy 0 <= low <= high, got {self.epoch_range}")


def _groups(tensor: torch.Tensor) -> torch.Tensor:
    """Rows are output channels; a vector (bias, norm scale) is a single group."""
    return tensor.reshape(1, -1) if tensor.dim() == 1 else tensor.reshape(tensor.shape[0], -1)


def grad_distance(
    grad_a: Dict[str, torch.Tensor], grad_b: Dict[str, torch.Tensor], cfg: GradMatchConfig = GradMatchConfig()
) -> torch.Tensor:
    """Distance between two per-layer gradient sets.

    ``layerwise-cosine`` sums ``1 − a·b / (‖a‖‖b‖ + eps)`` over layers and output channels;
    ``cosine-plus-l2`` adds ``‖a − b‖`` per group; ``euclidean`` is the squared distance of
    the flattened sets.

    >>> a = {"w": torch.tensor([[1.0, 0.0]])}
    >>> b = {"w": torch.tensor([[0.0, 1.0]])}
    >>> float(grad_distance(a, b))
    1.0
    """
    if grad_a.keys() != grad_b.keys():
        raise ArgumentError(f"gradient sets differ in layers: {sorted(grad_a)} vs {sorted(grad_b)}")
    total = None
    for name, tensor_a in grad_a.items():
        tensor_b = grad_b[name]
        if tensor_a.shape != tensor_b.shape:
            raise ArgumentError(f"layer {name} shapes differ: {tuple(tensor_a.shape)} vs {tuple(tensor_b.shape)}")
        rows_a, rows_b = _groups(tensor_a), _groups(tensor_b)
        if cfg.distance == "euclidean":
            term = (rows_a - rows_b).pow(2).sum()
        else:
            cosine = (rows_a * rows_b).sum(dim=1) / (rows_a.norm(dim=1) * rows_b.norm(dim=1) + cfg.eps)
            term = (1.0 - cosine).sum()
            if cfg.distance == "cosine-plus-l2":
                term = term + (rows_a - rows_b).norm(dim=1).sum()
        total = term if total is None else total + term
    if total is None:
        raise ArgumentError("empty gradient sets")
    return total


def _layer_grads(
    model: ModelState, params: torch.Tensor, images: torch.Tensor, labels: torch.Tensor, loss: LossKind, graph: bool
) -> Dict[str, torch.Tensor]:
    (grad,) = torch.autograd.grad(model_loss(model, images, labels, loss, params), params, create_graph=graph)
    return model.tensors(grad if graph else grad.detach())


def _mean_grads(grads: List[Dict[str, torch.Tensor]]) -> Dict[str, torch.Tensor]:
    return {name: torch.stack([grad[name] for grad in grads]).mean(dim=0) for name in grads[0]}


def grad_match_loss(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    model: ModelState,
    cfg: GradMatchConfig = GradMatchConfig(),
    aug_seed: Optional[int] = None,
) -> ObjectiveResult:
    """Match per-class network gradients on synthetic and real batches."""
    cfg.validate()
    real_images, real_labels = real_batch
    syn_images, syn_labels = materialize(synthetic)
    num_classes = synthetic.num_classes
    real_members = class_members(real_labels.argmax(dim=1), num_classes, "real")
    syn_members = class_members(synthetic.classes, num_classes, "synthetic")
    params = detached_params(model.params)

    real_grads, syn_grads = [], []
    for class_id in range(num_classes):
        real_ids, syn_ids = real_members[class_id], syn_members[class_id]
        real_x, syn_x = maybe_augment(
            synthetic, real_images[real_ids], syn_images[syn_ids], sub_seed(aug_seed, f"class:{class_id}")
        )
        real_grads.append(_layer_grads(model, params, real_x, real_labels[real_ids], cfg.loss, graph=False))
        syn_grads.append(_layer_grads(model, params, syn_x, syn_labels[syn_ids], cfg.loss, graph=True))

    loss: Optional[torch.Tensor] = None
    if cfg.grouping in ("per-class", "combined"):
        for syn_grad, real_grad in zip(syn_grads, real_grads):
            term = grad_distance(syn_grad, real_grad, cfg)
            loss = term if loss is None else loss + term
    if cfg.grouping == "class-mean" or (cfg.grouping == "combined" and cfg.balance):
        term = grad_distance(_mean_grads(syn_grads), _mean_grads(real_grads), cfg)
        loss = term if loss is None else loss + cfg.balance * term
    assert loss is not None
    return synthetic_gradients(loss, synthetic)


def trajectory_distance(student_end: torch.Tensor, start: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """``‖θ_S − θ_T‖² / ‖θ_T − θ_0‖²``; raises :class:`DegenerateTrajectoryError` if the teacher did not move."""
    denominator = (target - start).pow(2).sum()
    if float(denominator) == 0.0:
        raise DegenerateTrajectoryError("teacher start and target checkpoints coincide")
    return (student_end - target).pow(2).sum() / denominator


def start_window(trajectory: Trajectory, cfg: TrajMatchConfig) -> Tuple[int, int]:
    """Inclusive range of admissible start positions."""
    low, high = cfg.epoch_range
    high = min(high, len(trajectory) - 1 - cfg.teacher_steps)
    if low > high:
        raise ArgumentError(
            f"epoch_range {cfg.epoch_range} with teacher_steps {cfg.teacher_steps} does not fit a "
            f"{len(trajectory)}-checkpoint trajectory"
        )
    return low, high


def traj_match_loss(
    synthetic: SyntheticDataset,
    trajectory: Trajectory,
    cfg: TrajMatchConfig = TrajMatchConfig(),
    generator: Optional[torch.Generator] = None,
    aug_seed: Optional[int] = None,
    start: Optional[int] = None,
) -> ObjectiveResult:
    """Train a student from a teacher checkpoint on the synthetic data and compare endpoints.

    :param synthetic: Synthetic dataset.
    :param trajectory: Teacher trajectory.
    :param cfg: Matching settings.
    :param generator: Draws the start position uniformly from the window.
    :param aug_seed: Augmentation seed; step ``t`` uses its own draw.
    :param start: Fixed start position, overriding the draw.
    """
    cfg.validate()
    low, high = start_window(trajectory, cfg)
    if start is None:
        start = int(torch.randint(low, high + 1, (1,), generator=generator).item())
    elif not low <= start <= high:
        raise ArgumentError(f"start position {start} outside the window [{low}, {high}]")
    model = trajectory.model(start)
    dtype = synthetic.labels.values.dtype
    theta0 = model.params.to(dtype)
    target = trajectory.checkpoints[start + cfg.teacher_steps][1].to(dtype)
    if float((target - theta0).pow(2).sum()) == 0.0:
        raise DegenerateTrajectoryError(f"teacher did not move between positions {start} and {start + cfg.teacher_steps}")
    model = model.with_params(theta0)

    def step_images(images: torch.Tensor, step: int) -> torch.Tensor:
        return maybe_augment(synthetic, images[:0], images, sub_seed(aug_seed, f"step:{step}"))[1]

    if cfg.memory_mode == "unrolled":
        images, labels = materialize(synthetic)

        def loss_fn(params: torch.Tensor, step: int) -> torch.Tensor:
            return model_loss(model, step_images(images, step), labels, cfg.loss, params)

        student = descend(theta0, loss_fn, cfg.student_steps, cfg.student_lr, create_graph=True)
        loss = trajectory_distance(student, theta0, target)
        return synthetic_gradients(loss, synthetic)._replace(retained_graphs=max(cfg.student_steps, 1))
    return _accumulate(synthetic, model, theta0, target, cfg, step_images)


def _accumulate(
    synthetic: SyntheticDataset,
    model: ModelState,
    theta0: torch.Tensor,
    target: torch.Tensor,
    cfg: TrajMatchConfig,
    step_images: Callable[[torch.Tensor, int], torch.Tensor],
) -> ObjectiveResult:
    """Exact gradient with one step's graph alive at a time.

    The forward pass stores every θ_i; the backward pass rebuilds step i alone and pulls the
    adjoint λ_{i+1} = ∂L/∂θ_{i+1} through it:
    ``∂L/∂S += −η ∂(g_i·λ_{i+1})/∂S`` and ``λ_i = λ_{i+1} − η ∂(g_i·λ_{i+1})/∂θ_i``.
    """
    thetas = [theta0]

    def step_batch(step: int) -> Tuple[torch.Tensor, torch.Tensor]:
        images, labels = materialize(synthetic)
        return step_images(images, step), labels

    def loss_fn(params: torch.Tensor, step: int) -> torch.Tensor:
        images, labels = step_batch(step)
        return model_loss(model, images.detach(), labels.detach(), cfg.loss, params)

    descend(theta0, loss_fn, cfg.student_steps, cfg.student_lr, on_step=lambda _, params: thetas.append(params.detach()))
    student = thetas[-1]
    with torch.no_grad():
        denominator = (target - theta0).pow(2).sum()
        loss = (student - target).pow(2).sum() / denominator
    validate_finite("loss", loss, cfg.student_steps)
    adjoint = 2.0 * (student - target) / denominator
    leaves = synthetic.learnables()
    totals = {name: torch.zeros_like(value) for name, value in leaves.items()}
    for step in reversed(range(cfg.student_steps)):
        params = detached_params(thetas[step])
        images, labels = step_batch(step)
        (grad,) = torch.autograd.grad(model_loss(model, images, labels, cfg.loss, params), params, create_graph=True)
        pulled = (grad * adjoint).sum()
        wrt = torch.autograd.grad(pulled, [params, *leaves.values()], allow_unused=True)
        for (name, _), part in zip(leaves.items(), wrt[1:]):
            if part is not None:
                totals[name] -= cfg.student_lr * part
        adjoint = adjoint - cfg.student_lr * wrt[0]
    return ObjectiveResult(loss=float(loss), grads=totals, retained_graphs=1)
