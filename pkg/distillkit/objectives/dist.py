"""Distribution matching: per-class embedding means, and layer-wise matching with a discrimination term."""
from __future__ import annotations

from typing import List, NamedTuple, Optional, Tuple

import torch
import torch.nn.functional as F
from typing_extensions import Literal

from distillkit.nnkit.model import ModelState, forward
from distillkit.param_space.synthetic import SyntheticDataset, materialize
from distillkit.utils.validate import validate_choice, validate_positive

from .common import ObjectiveResult, class_members, maybe_augment, sub_seed, synthetic_gradients


class DistMatchConfig(NamedTuple):
    """Distribution-matching settings."""

    variant: Literal["dm", "cafe"] = "dm"
    """Mean matching of the embedding, or layer-wise matching plus discrimination."""
    balance: float = 1.0
    """λ of the discrimination term (cafe)."""
    layers: Literal["all", "last-feature"] = "all"
    """Match every block output, or only the embedding (cafe)."""
    second_moment: float = 0.0
    """Weight of the per-class feature correlation difference (dm)."""

    def validate(self) -> None:
        """Check the config, raising :class:`ArgumentError`."""
        validate_choice("distribution-matching variant", self.variant, ("dm", "cafe"))
        validate_choice("layers", self.layers, ("all", "last-feature"))
        validate_positive("balance", self.balance, strict=False)
        validate_positive("second_moment", self.second_moment, strict=False)


def _per_class_features(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    model: ModelState,
    aug_seed: Optional[int],
) -> Tuple[List[List[torch.Tensor]], List[List[torch.Tensor]]]:
    """Block outputs of every class, flattened per sample, for synthetic and real batches."""
    real_images, real_labels = real_batch
    syn_images, _ = materialize(synthetic)
    num_classes = synthetic.num_classes
    real_members = class_members(real_labels.argmax(dim=1), num_classes, "real")
    syn_members = class_members(synthetic.classes, num_classes, "synthetic")
    params = model.params.detach()
    syn_feats, real_feats = [], []
    for class_id in range(num_classes):
        real_x, syn_x = maybe_augment(
            synthetic,
            real_images[real_members[class_id]],
            syn_images[syn_members[class_id]],
            sub_seed(aug_seed, f"class:{class_id}"),
        )
        syn_feats.append([feature.flatten(1) for feature in forward(model, syn_x, params)[0]])
        real_feats.append([feature.flatten(1) for feature in forward(model, real_x, params)[0]])
    return syn_feats, real_feats


def _mean_distance(syn: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
    return (syn.mean(dim=0) - real.mean(dim=0)).pow(2).sum()


def _correlation_distance(syn: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
    return (syn.T @ syn / syn.shape[0] - real.T @ real / real.shape[0]).pow(2).sum()


def dm_loss(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    model: ModelState,
    cfg: DistMatchConfig = DistMatchConfig(),
    aug_seed: Optional[int] = None,
) -> ObjectiveResult:
    """``Σ_c ‖μ_s,c − μ_t,c‖²`` of the embedding, plus the optional second-moment term. The model is not updated."""
    cfg.validate()
    syn_feats, real_feats = _per_class_features(synthetic, real_batch, model, aug_seed)
    loss: Optional[torch.Tensor] = None
    for syn, real in zip(syn_feats, real_feats):
        term = _mean_distance(syn[-1], real[-1])
        if cfg.second_moment:
            term = term + cfg.second_moment * _correlation_distance(syn[-1], real[-1])
        loss = term if loss is None else loss + term
    assert loss is not None
    return synthetic_gradients(loss, synthetic)


def cafe_probabilities(real_embeddings: torch.Tensor, syn_centers: torch.Tensor) -> torch.Tensor:
    """``p(c | x_t) = softmax_c(μ_s,c · f(x_t))`` for every real sample.

    >>> probs = cafe_probabilities(torch.eye(2), torch.eye(2))
    >>> probs.sum(dim=1).tolist()
    [1.0, 1.0]
    """
    return F.softmax(real_embeddings @ syn_centers.T, dim=1)


def cafe_loss(
    synthetic: SyntheticDataset,
    real_batch: Tuple[torch.Tensor, torch.Tensor],
    model: ModelState,
    cfg: DistMatchConfig = DistMatchConfig(variant="cafe"),
    aug_seed: Optional[int] = None,
) -> ObjectiveResult:
    """Layer-wise class-mean matching plus λ times the summed −log p(true class) of the real samples.

    The network is updated between calls by the engine's update-on-synthetic schedule.
    """
    cfg.validate()
    syn_feats, real_feats = _per_class_features(synthetic, real_batch, model, aug_seed)
    loss: Optional[torch.Tensor] = None
    for syn, real in zip(syn_feats, real_feats):
        pairs = zip(syn, real) if cfg.layers == "all" else [(syn[-1], real[-1])]
        for syn_layer, real_layer in pairs:
            term = _mean_distance(syn_layer, real_layer)
            loss = term if loss is None else loss + term
    assert loss is not None
    if cfg.balance:
        centers = torch.stack([syn[-1].mean(dim=0) for syn in syn_feats])
        real_embeddings = torch.cat([real[-1] for real in real_feats])
        targets = torch.cat([torch.full((real[-1].shape[0],), class_id) for class_id, real in enumerate(real_feats)])
        log_probs = F.log_softmax(real_embeddings @ centers.T, dim=1)
        loss = loss + cfg.balance * F.nll_loss(log_probs, targets, reduction="sum")
    return synthetic_gradients(loss, synthetic)
