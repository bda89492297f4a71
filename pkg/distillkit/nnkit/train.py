"""Gradient-descent training of functional networks, with trajectory recording."""
from __future__ import annotations

import logging
import math
from typing import Callable, List, NamedTuple, Optional, Tuple, Union, overload

import torch
from typing_extensions import Literal

from distillkit.errors import ArgumentError
from distillkit.types import LossKind
from distillkit.utils.helpers import stream_seed
from distillkit.utils.validate import validate_choice, validate_positive, validate_range, validate_finite

from .model import ArchDescriptor, ModelState, check_layer_map, layer_map, model_loss

logger = logging.getLogger("distillkit.nnkit")

LossFn = Callable[[torch.Tensor, int], torch.Tensor]
"""Loss of a flat parameter vector at a given global step."""

StepHook = Callable[[int, torch.Tensor], None]
"""Called with (steps completed, new θ) after every update."""


class TrainConfig(NamedTuple):
    """Network training settings."""

    steps: int = 0
    """Number of gradient steps."""
    lr: float = 0.01
    """Learning rate η."""
    momentum: float = 0.0
    """Momentum β; the velocity starts at zero."""
    loss: LossKind = "cross-entropy"
    """Training loss."""
    batch_size: int = 0
    """Mini-batch size; 0 trains full batch."""
    seed: int = 0
    """Seed of the mini-batch draws."""
    record_every: int = 0
    """Steps between recorded checkpoints; 0 records every half epoch."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        validate_positive("steps", self.steps, strict=False)
        validate_positive("lr", self.lr)
        validate_range("momentum", self.momentum, 0.0, 1.0)
        validate_choice("loss", self.loss, ("cross-entropy", "mse"))
        validate_positive("batch_size", self.batch_size, strict=False)
        validate_positive("record_every", self.record_every, strict=False)

    def steps_per_epoch(self, num_samples: int) -> int:
        """Mini-batch steps that make up one pass over ``num_samples``."""
        if not self.batch_size or self.batch_size >= num_samples:
            return 1
        return math.ceil(num_samples / self.batch_size)

    def snapshot_interval(self, num_samples: int) -> int:
        """Steps between recorded checkpoints."""
        return self.record_every or max(1, self.steps_per_epoch(num_samples) // 2)


class Trajectory(NamedTuple):
    """Checkpoints of a network trained on real data."""

    arch: ArchDescriptor
    """Architecture every checkpoint belongs to."""
    checkpoints: Tuple[Tuple[int, torch.Tensor], ...]
    """(step index, flat θ) pairs with strictly increasing steps."""
    train_config: TrainConfig
    """Training settings that produced the checkpoints."""

    def validate(self) -> None:
        """Check index order and shape compatibility."""
        size = sum(spec.numel for spec in layer_map(self.arch))
        previous = -1
        for step, params in self.checkpoints:
            if step <= previous:
                raise ArgumentError(f"checkpoint steps must increase strictly, got {step} after {previous}")
            if params.shape != (size,):
                raise ArgumentError(f"checkpoint at step {step} holds {tuple(params.shape)}, expected ({size},)")
            previous = step

    @property
    def steps(self) -> List[int]:
        """Step index of every checkpoint."""
        return [step for step, _ in self.checkpoints]

    def __len__(self) -> int:
        """Number of checkpoints."""
        return len(self.checkpoints)

    def model(self, position: int) -> ModelState:
        """Network at checkpoint ``position``."""
        specs = layer_map(self.arch)
        params = self.checkpoints[position][1]
        check_layer_map(specs, params.numel())
        return ModelState(arch=self.arch, params=params, layer_map=specs)


def descend(
    params: torch.Tensor,
    loss_fn: LossFn,
    steps: int,
    lr: float,
    momentum: float = 0.0,
    create_graph: bool = False,
    start_step: int = 0,
    on_step: Optional[StepHook] = None,
) -> torch.Tensor:
    """Heavy-ball gradient descent on a flat vector.

    With β = ``momentum`` the update is ``m ← βm + ∇l(θ)``, ``θ ← θ − ηm`` from ``m = 0``;
    β = 0 takes the plain step ``θ ← θ − η∇l(θ)``.

    :param params: Start vector θ^(0).
    :param loss_fn: Loss of θ at a global step index.
    :param steps: Number of updates.
    :param lr: Learning rate η.
    :param momentum: Momentum β.
    :param create_graph: Keep the graph so the result can be differentiated through every step.
    :param start_step: Global index of the first step (selects mini-batches on replay).
    :param on_step: Hook called after every update.

    >>> quadratic = lambda theta, step: 0.5 * (theta - 3.0).pow(2).sum()
    >>> descend(torch.tensor([1.0]), quadratic, 1, 0.5).tolist()
    [2.0]
    """
    velocity: Optional[torch.Tensor] = None
    if create_graph and not params.requires_grad:
        params = params.detach().requires_grad_(True)
    for step in range(start_step, start_step + steps):
        if not create_graph:
            params = params.detach().requires_grad_(True)
        loss = loss_fn(params, step)
        validate_finite("loss", loss, step)
        (grad,) = torch.autograd.grad(loss, params, create_graph=create_graph)
        if momentum:
            velocity = grad if velocity is None else momentum * velocity + grad
            params = params - lr * velocity
        else:
            params = params - lr * grad
        if on_step is not None:
            on_step(step + 1, params)
    return params if create_graph else params.detach()


def batch_indices(seed: int, step: int, num_samples: int, batch_size: int) -> torch.Tensor:
    """Mini-batch ids of global step ``step``; a pure function of (seed, step)."""
    generator = torch.Generator().manual_seed(stream_seed(seed, f"batch:{step}"))
    return torch.randperm(num_samples, generator=generator)[:batch_size]


def data_loss_fn(
    model: ModelState, images: torch.Tensor, targets: torch.Tensor, config: TrainConfig
) -> LossFn:
    """Loss closure over (images, targets), drawing mini-batches per ``config``."""
    num_samples = images.shape[0]

    def loss_fn(params: torch.Tensor, step: int) -> torch.Tensor:
        if config.batch_size and config.batch_size < num_samples:
            ids = batch_indices(config.seed, step, num_samples, config.batch_size)
            return model_loss(model, images[ids], targets[ids], config.loss, params)
        return model_loss(model, images, targets, config.loss, params)

    return loss_fn


@overload
def train_steps(
    model: ModelState,
    data: Tuple[torch.Tensor, torch.Tensor],
    config: TrainConfig,
    record: Literal[False] = ...,
    start_step: int = ...,
) -> ModelState:
    ...


@overload
def train_steps(
    model: ModelState,
    data: Tuple[torch.Tensor, torch.Tensor],
    config: TrainConfig,
    record: Literal[True],
    start_step: int = ...,
) -> Tuple[ModelState, Trajectory]:
    ...


def train_steps(
    model: ModelState,
    data: Tuple[torch.Tensor, torch.Tensor],
    config: TrainConfig,
    record: bool = False,
    start_step: int = 0,
) -> Union[ModelState, Tuple[ModelState, Trajectory]]:
    """Apply exactly ``config.steps`` gradient steps to ``model`` on ``data``.

    Mini-batches of global step ``t`` depend only on (``config.seed``, t), so training from a
    recorded checkpoint at step k with ``start_step=k`` replays the original run exactly when
    the momentum is 0.

    :param model: Start network; it is not modified.
    :param data: Images and one-hot (or soft) targets.
    :param config: Training settings.
    :param record: Also return the checkpoints recorded every ``config.snapshot_interval``
        steps, including the start and the final step.
    :param start_step: Global index of the first step.
    """
    config.validate()
    images, targets = data
    checkpoints: List[Tuple[int, torch.Tensor]] = [(start_step, model.params.detach().clone())]
    interval = config.snapshot_interval(images.shape[0])
    last = start_step + config.steps

    def keep(step: int, params: torch.Tensor) -> None:
        if step % interval == 0 or step == last:
            checkpoints.append((step, params.detach().clone()))

    params = descend(
        model.params,
        data_loss_fn(model, images, targets, config),
        config.steps,
        config.lr,
        config.momentum,
        start_step=start_step,
        on_step=keep if record else None,
    )
    logger.debug("Trained network. Arch: %s, Steps: %d, Start: %d", model.arch.id, config.steps, start_step)
    trained = model.with_params(params)
    if not record:
        return trained
    return trained, Trajectory(arch=model.arch, checkpoints=tuple(checkpoints), train_config=config)


def unroll(
    model: ModelState,
    images: torch.Tensor,
    targets: torch.Tensor,
    steps: int,
    lr: float,
    momentum: float = 0.0,
    loss: LossKind = "cross-entropy",
) -> torch.Tensor:
    """θ after ``steps`` full-batch steps on (images, targets), differentiable w.r.t. the data."""
    return descend(
        model.params,
        lambda params, _: model_loss(model, images, targets, loss, params),
        steps,
        lr,
        momentum,
        create_graph=True,
    )
