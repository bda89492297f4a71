"""Performance matching: unrolled meta loss and kernel ridge regression."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional, Tuple

import torch
from typing_extensions import Literal

from distillkit.errors import ArgumentError, SolverError
from distillkit.nnkit.model import ModelState, embed, model_loss
from distillkit.nnkit.train import unroll
from distillkit.param_space.synthetic import SyntheticDataset, materialize
from distillkit.types import LossKind
from distillkit.utils.validate import validate_choice, validate_positive, validate_range

from .common import ObjectiveResult, maybe_augment, synthetic_gradients

MAX_UNROLL = 200
"""Hard cap on the inner steps of the meta loss."""

RIDGE_SCALE = 1e-6
"""Default ridge relative to the mean kernel diagonal."""

RIDGE_FLOOR = 1e-12
"""Smallest default ridge."""


class MetaConfig(NamedTuple):
    """Unrolled meta-loss settings."""

    inner_steps: int = 10
    """Inner updates T on the synthetic data."""
    inner_lr: float = 0.01
    """Inner learning rate η."""
    momentum: float = 0.0
    """Inner momentum β."""
    loss: LossKind = "mse"
    """Inner and outer loss."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        validate_positive("inner_steps", self.inner_steps)
        if self.inner_steps > MAX_UNROLL:
            raise ArgumentError(f"inner_steps {self.inner_steps} exceeds the unroll cap of {MAX_UNROLL}")
        validate_positive("inner_lr", self.inner_lr)
        validate_range("momentum", self.momentum, 0.0, 1.0)
        validate_choice("loss", self.loss, ("cross-entropy", "mse"))


class KRRConfig(NamedTuple):
    """Kernel ridge regression settings."""

    ridge: Optional[float] = None
    """Ridge λ ≥ 0; None uses ``max(1e-6 · mean(diag K_ss), 1e-12)``."""
    mode: Literal["kip-fixed-extractor", "frepo-pool"] = "kip-fixed-extractor"
    """Where the feature extractor comes from; the loss is the same."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        if self.ridge is not None:
            validate_positive("ridge", self.ridge, strict=False)
        validate_choice("KRR mode", self.mode, ("kip-fixed-extractor", "frepo-pool"))


def meta_memory_estimate(model: ModelState, num_synthetic: int, inner_steps: int) -> int:
    """Rough bytes kept alive by an unrolled meta loss: T copies of θ, its gradient and the activations."""
    activations = sum(math.prod(shape) for shape in model.arch.block_shapes()) * num_synthetic
    return inner_steps * (3 * model.num_params + 2 * activations) * model.params.element_size()


def meta_loss(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    model0: ModelState,
    cfg: MetaConfig = MetaConfig(),
    aug_seed: Optional[int] = None,
) -> ObjectiveResult:
    """Loss on the real batch after T inner steps on the synthetic data, differentiated through the unroll."""
    cfg.validate()
    real_images, real_labels = real_batch
    syn_images, syn_labels = materialize(synthetic)
    real_images, syn_images = maybe_augment(synthetic, real_images, syn_images, aug_seed)
    params = unroll(model0, syn_images, syn_labels, cfg.inner_steps, cfg.inner_lr, cfg.momentum, cfg.loss)
    loss = model_loss(model0, real_images, real_labels, cfg.loss, params)
    return synthetic_gradients(loss, synthetic, cfg.inner_steps)


def default_ridge(kernel: torch.Tensor) -> torch.Tensor:
    """``max(1e-6 · mean(diag K), 1e-12)``."""
    return torch.clamp(RIDGE_SCALE * torch.diagonal(kernel).mean(), min=RIDGE_FLOOR)


def krr_predict(
    syn_features: torch.Tensor, syn_labels: torch.Tensor, real_features: torch.Tensor, ridge: Optional[float]
) -> torch.Tensor:
    """``K_ts (K_ss + λI)^{-1} Y_s`` with ``K = F Fᵀ``."""
    kernel_ss = syn_features @ syn_features.T
    kernel_ts = real_features @ syn_features.T
    size = kernel_ss.shape[0]
    if ridge == 0 and int(torch.linalg.matrix_rank(kernel_ss.detach())) < size:
        raise SolverError(f"K_ss of size {size} is singular; use a positive ridge")
    lam = default_ridge(kernel_ss) if ridge is None else ridge
    system = kernel_ss + lam * torch.eye(size, dtype=kernel_ss.dtype, device=kernel_ss.device)
    alpha, info = torch.linalg.solve_ex(system, syn_labels)
    if int(info) != 0:
        raise SolverError(f"kernel system is singular (pivot {int(info)}); use a positive ridge")
    return kernel_ts @ alpha


def krr_loss(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    model: ModelState,
    cfg: KRRConfig = KRRConfig(),
    aug_seed: Optional[int] = None,
) -> ObjectiveResult:
    """``‖Y_t − K_ts (K_ss + λI)^{-1} Y_s‖²`` with the empirical kernel of the model's embedding."""
    cfg.validate()
    real_images, real_labels = real_batch
    syn_images, syn_labels = materialize(synthetic)
    real_images, syn_images = maybe_augment(synthetic, real_images, syn_images, aug_seed)
    params = model.params.detach()
    prediction = krr_predict(embed(model, syn_images, params), syn_labels, embed(model, real_images, params), cfg.ridge)
    loss = (real_labels - prediction).pow(2).sum()
    return synthetic_gradients(loss, synthetic)


def frepo_loss(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    pool_model: ModelState,
    cfg: KRRConfig = KRRConfig(mode="frepo-pool"),
    aug_seed: Optional[int] = None,
) -> ObjectiveResult:
    """KRR loss at the current pool model; the engine trains the pool model on the synthetic data."""
    return krr_loss(synthetic, real_batch, pool_model, cfg, aug_seed)
