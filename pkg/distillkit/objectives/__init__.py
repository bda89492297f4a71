"""Distillation objectives.

Every objective materializes the synthetic dataset, evaluates its loss and returns an
:class:`ObjectiveResult` holding the loss and the gradient of every learnable synthetic tensor.
"""
from .common import ObjectiveResult  # noqa: F401
from .dist import DistMatchConfig, cafe_loss, cafe_probabilities, dm_loss  # noqa: F401
from .param import (  # noqa: F401
    GradMatchConfig,
    TrajMatchConfig,
    grad_distance,
    grad_match_loss,
    traj_match_loss,
    trajectory_distance,
)
from .perf import KRRConfig, MetaConfig, frepo_loss, krr_loss, meta_loss  # noqa: F401
