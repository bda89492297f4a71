"""Helpers shared by every objective."""
from __future__ import annotations

from typing import Dict, List, NamedTuple, Optional, Tuple

import torch

from distillkit.errors import SamplingError
from distillkit.param_space.augment import dsa_apply
from distillkit.param_space.synthetic import SyntheticDataset
from distillkit.utils.helpers import stream_seed
from distillkit.utils.validate import validate_finite


class ObjectiveResult(NamedTuple):
    """Loss of one synthetic update and its gradients."""

    loss: float
    """Objective value."""
    grads: Dict[str, torch.Tensor]
    """Gradient of every learnable synthetic tensor, keyed as ``SyntheticDataset.learnables``."""
    retained_graphs: int = 1
    """Largest number of training-step graphs alive at once."""


def synthetic_gradients(loss: torch.Tensor, synthetic: SyntheticDataset, step: int = 0) -> ObjectiveResult:
    """Differentiate ``loss`` w.r.t. every learnable tensor; unused tensors get zeros."""
    validate_finite("loss", loss, step)
    leaves = synthetic.learnables()
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    return ObjectiveResult(
        loss=float(loss.detach()),
        grads={
            name: torch.zeros_like(value) if grad is None else grad
            for (name, value), grad in zip(leaves.items(), grads)
        },
    )


def sub_seed(seed: Optional[int], tag: str) -> Optional[int]:
    """Seed of one augmentation draw inside an iteration."""
    return None if seed is None else stream_seed(seed, tag)


def maybe_augment(
    synthetic: SyntheticDataset, real_images: torch.Tensor, syn_images: torch.Tensor, seed: Optional[int]
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Apply the dataset's siamese augmentation when it has one and a seed is given."""
    if synthetic.augment is None or seed is None:
        return real_images, syn_images
    return dsa_apply(real_images, syn_images, synthetic.augment, seed)


def class_members(classes: torch.Tensor, num_classes: int, batch: str) -> List[torch.Tensor]:
    """Row ids of every class, raising :class:`SamplingError` for an absent class."""
    members = []
    for class_id in range(num_classes):
        ids = torch.nonzero(classes == class_id, as_tuple=False).flatten()
        if ids.numel() == 0:
            raise SamplingError(class_id, batch)
        members.append(ids)
    return members


def detached_params(params: torch.Tensor) -> torch.Tensor:
    """Leaf copy of θ that records gradients."""
    return params.detach().clone().requires_grad_(True)
