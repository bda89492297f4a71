"""Validation utilities."""
from __future__ import annotations

import math
from typing import Any, Iterable

import torch

from distillkit.errors import ArgumentError, NumericalFailure


def validate_positive(name: str, value: float, strict: bool = True) -> None:
    """Verify a scalar is positive (or non-negative when ``strict`` is False).

    :param name: Argument name used in the error message.
    :param value: The value to check.
    :param strict: Reject zero as well.
    """
    if value is None or (value <= 0 if strict else value < 0) or math.isnan(value):
        bound = "> 0" if strict else ">= 0"
        raise ArgumentError(f"{name} must be {bound}, got {value}")


def validate_range(name: str, value: float, low: float, high: float) -> None:
    """Verify ``low <= value < high``."""
    if not low <= value < high:
        raise ArgumentError(f"{name} must lie in [{low}, {high}), got {value}")


def validate_choice(name: str, value: Any, choices: Iterable[Any]) -> None:
    """Verify a value is one of the allowed choices."""
    allowed = tuple(choices)
    if value not in allowed:
        raise ArgumentError(f"unknown {name} {value!r}; expected one of {', '.join(map(str, allowed))}")


def validate_finite(what: str, value: torch.Tensor, step: int) -> None:
    """Raise :class:`NumericalFailure` if a tensor holds NaN or Inf.

    :param what: Name of the quantity, e.g. ``"loss"``.
    :param value: Tensor to check.
    :param step: Iteration index reported in the error.
    """
    if not bool(torch.isfinite(value.detach()).all()):
        raise NumericalFailure(what, step)
