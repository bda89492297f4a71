"""Differentiable siamese augmentation.

One parameter draw per (iteration, op) is applied identically to the real and the synthetic
batch, and to every sample in them. All transforms are differentiable w.r.t. the pixels.
"""
from __future__ import annotations

import math
from typing import List, NamedTuple, Tuple

import torch
import torch.nn.functional as F
from typing_extensions import Literal

from distillkit.errors import ArgumentError
from distillkit.utils.validate import validate_choice, validate_range

DSA_OPS = ("color-jitter", "crop", "cutout", "flip", "scale", "rotate")
"""Supported augmentation ops, applied in this order."""


class DSAConfig(NamedTuple):
    """Augmentation ops and their parameter ranges."""

    ops: Tuple[str, ...] = DSA_OPS
    """Ops to apply."""
    mode: Literal["all", "one"] = "all"
    """Apply every op, or one op drawn per iteration."""
    crop_ratio: float = 0.125
    """Maximal shift as a fraction of the image side."""
    cutout_ratio: float = 0.5
    """Side of the zeroed box as a fraction of the image side."""
    scale: float = 1.2
    """Scale factors are drawn from [1/scale, scale] per axis."""
    rotate_degrees: float = 15.0
    """Angles are drawn from [−rotate_degrees, rotate_degrees]."""
    brightness: float = 0.5
    """Additive brightness offset range ±brightness."""
    saturation: float = 1.0
    """Saturation factors are drawn from [1 − saturation, 1 + saturation]."""
    contrast: float = 0.5
    """Contrast factors are drawn from [1 − contrast, 1 + contrast]."""

    def validate(self) -> None:
        """Check ops and ranges, raising :class:`ArgumentError`."""
        if not self.ops:
            raise ArgumentError("DSA needs at least one op")
        for op in self.ops:
            validate_choice("augmentation op", op, DSA_OPS)
        validate_choice("augmentation mode", self.mode, ("all", "one"))
        validate_range("crop_ratio", self.crop_ratio, 0.0, 0.5)
        validate_range("cutout_ratio", self.cutout_ratio, 0.0, 1.0)
        validate_range("scale", self.scale, 1.0, 4.0)
        validate_range("rotate_degrees", self.rotate_degrees, 0.0, 180.0)
        validate_range("brightness", self.brightness, 0.0, 1.0)
        validate_range("contrast", self.contrast, 0.0, 1.0)
        if not 0.0 <= self.saturation <= 1.0:
            raise ArgumentError(f"saturation must lie in [0, 1], got {self.saturation}")


class DSAParams(NamedTuple):
    """One drawn transform."""

    op: str
    """Op name."""
    values: Tuple[float, ...]
    """Op-specific scalars: (dy, dx) shift, (cy, cx) box center, (flip,), (sy, sx), (angle,) or
    (brightness, saturation, contrast)."""


def _uniform(generator: torch.Generator, low: float, high: float) -> float:
    return low + (high - low) * float(torch.rand(1, generator=generator, dtype=torch.float64).item())


def draw_params(config: DSAConfig, seed: int, image_size: Tuple[int, int]) -> List[DSAParams]:
    """Transforms of one iteration, a pure function of (config, seed, image size)."""
    config.validate()
    generator = torch.Generator().manual_seed(seed)
    height, width = image_size
    ops = list(config.ops)
    if config.mode == "one":
        ops = [ops[int(torch.randint(len(ops), (1,), generator=generator).item())]]
    params = []
    for op in ops:
        if op == "crop":
            shift_y, shift_x = int(height * config.crop_ratio + 0.5), int(width * config.crop_ratio + 0.5)
            values: Tuple[float, ...] = (
                float(torch.randint(-shift_y, shift_y + 1, (1,), generator=generator).item()),
                float(torch.randint(-shift_x, shift_x + 1, (1,), generator=generator).item()),
            )
        elif op == "cutout":
            values = (
                float(torch.randint(height, (1,), generator=generator).item()),
                float(torch.randint(width, (1,), generator=generator).item()),
            )
        elif op == "flip":
            values = (float(_uniform(generator, 0.0, 1.0) < 0.5),)
        elif op == "scale":
            values = (
                _uniform(generator, 1.0 / config.scale, config.scale),
                _uniform(generator, 1.0 / config.scale, config.scale),
            )
        elif op == "rotate":
            values = (_uniform(generator, -config.rotate_degrees, config.rotate_degrees),)
        else:
            values = (
                _uniform(generator, -config.brightness, config.brightness),
                _uniform(generator, 1.0 - config.saturation, 1.0 + config.saturation),
                _uniform(generator, 1.0 - config.contrast, 1.0 + config.contrast),
            )
        params.append(DSAParams(op, values))
    return params


def _affine(x: torch.Tensor, theta: List[List[float]]) -> torch.Tensor:
    matrix = torch.tensor(theta, dtype=x.dtype, device=x.device).unsqueeze(0).expand(x.shape[0], 2, 3)
    grid = F.affine_grid(matrix, list(x.shape), align_corners=False)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def apply_params(x: torch.Tensor, params: DSAParams, config: DSAConfig = DSAConfig()) -> torch.Tensor:
    """Apply one drawn transform to a batch."""
    if x.shape[0] == 0:
        return x
    height, width = x.shape[2], x.shape[3]
    if params.op == "crop":
        dy, dx = int(params.values[0]), int(params.values[1])
        pad_y, pad_x = abs(dy), abs(dx)
        padded = F.pad(x, [pad_x, pad_x, pad_y, pad_y])
        return padded[:, :, pad_y + dy : pad_y + dy + height, pad_x + dx : pad_x + dx + width]
    if params.op == "cutout":
        box_h, box_w = int(height * config.cutout_ratio + 0.5), int(width * config.cutout_ratio + 0.5)
        top, left = int(params.values[0]) - box_h // 2, int(params.values[1]) - box_w // 2
        mask = torch.ones(height, width, dtype=x.dtype, device=x.device)
        mask[max(top, 0) : max(top + box_h, 0), max(left, 0) : max(left + box_w, 0)] = 0
        return x * mask
    if params.op == "flip":
        return x.flip(3) if params.values[0] else x
    if params.op == "scale":
        scale_y, scale_x = params.values
        return _affine(x, [[scale_x, 0.0, 0.0], [0.0, scale_y, 0.0]])
    if params.op == "rotate":
        angle = math.radians(params.values[0])
        cos, sin = math.cos(angle), math.sin(angle)
        return _affine(x, [[cos, -sin, 0.0], [sin, cos, 0.0]])
    brightness, saturation, contrast = params.values
    x = x + brightness
    channel_mean = x.mean(dim=1, keepdim=True)
    x = (x - channel_mean) * saturation + channel_mean
    sample_mean = x.mean(dim=(1, 2, 3), keepdim=True)
    return (x - sample_mean) * contrast + sample_mean


def augment(x: torch.Tensor, config: DSAConfig, seed: int) -> torch.Tensor:
    """Apply the transforms drawn for ``seed`` to one batch."""
    for params in draw_params(config, seed, (x.shape[2], x.shape[3])):
        x = apply_params(x, params, config)
    return x


def dsa_apply(
    batch_a: torch.Tensor, batch_b: torch.Tensor, config: DSAConfig, seed: int
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Augment two batches with the same transform draw.

    >>> a, b = torch.rand(2, 1, 4, 4), torch.rand(3, 1, 4, 4)
    >>> out_a, out_b = dsa_apply(a, b, DSAConfig(ops=("flip",)), seed=0)
    >>> out_a.shape == a.shape and out_b.shape == b.shape
    True
    """
    if batch_a.shape[1:] != batch_b.shape[1:]:
        raise ArgumentError(f"batches differ in shape: {tuple(batch_a.shape[1:])} vs {tuple(batch_b.shape[1:])}")
    return augment(batch_a, config, seed), augment(batch_b, config, seed)
