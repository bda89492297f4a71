"""Synthetic label storage."""
from __future__ import annotations

from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F

from distillkit.errors import ConfigurationError
from distillkit.nnkit.model import ModelState, forward
from distillkit.types import LabelMode
from distillkit.utils.validate import validate_choice

LABEL_MODES = ("fixed-onehot", "learnable", "teacher-soft")


class LabelStore(NamedTuple):
    """Labels of the materialized synthetic images.

    Learnable labels are unconstrained reals used as targets directly; teacher-soft labels are
    frozen at initialization.
    """

    mode: LabelMode
    """``fixed-onehot``, ``learnable`` or ``teacher-soft``."""
    values: torch.Tensor
    """M×C label matrix; a leaf requiring grad in learnable mode."""

    @property
    def learnable(self) -> bool:
        """Whether the values receive gradients."""
        return self.mode == "learnable"

    @property
    def float_count(self) -> int:
        """Stored reals counted against the budget (learnable labels only)."""
        return int(self.values.numel()) if self.learnable else 0


def init_labels(
    mode: LabelMode,
    classes: torch.Tensor,
    num_classes: int,
    teacher: Optional[ModelState] = None,
    images: Optional[torch.Tensor] = None,
) -> LabelStore:
    """Initial labels for synthetic images of the given classes.

    :param mode: Label mode.
    :param classes: M integer classes.
    :param num_classes: Number of classes C.
    :param teacher: Network whose softmax gives the labels; required iff mode is ``teacher-soft``.
    :param images: Materialized images the teacher labels.

    >>> init_labels("fixed-onehot", torch.tensor([2]), 4).values.tolist()
    [[0.0, 0.0, 1.0, 0.0]]
    """
    validate_choice("label mode", mode, LABEL_MODES)
    dtype = images.dtype if images is not None else torch.get_default_dtype()
    onehot = F.one_hot(classes.long(), num_classes).to(dtype)
    if mode == "teacher-soft":
        if teacher is None or images is None:
            raise ConfigurationError("teacher-soft labels need a teacher network and the materialized images")
        with torch.no_grad():
            _, logits = forward(teacher, images.detach().to(teacher.params.dtype))
        return LabelStore(mode, F.softmax(logits, dim=1).to(dtype))
    if teacher is not None:
        raise ConfigurationError(f"label mode {mode} does not take a teacher")
    if mode == "learnable":
        return LabelStore(mode, onehot.clone().requires_grad_(True))
    return LabelStore(mode, onehot)
