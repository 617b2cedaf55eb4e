"""Regularizers on the attention map and assembly of the total training loss.

Three terms: the pretext classification loss (see scalenet), a total-variation
smoothness penalty, and an equivariance penalty tying the attention of a
transformed image to the transformed attention of the original. Ablation flags
zero out individual terms without touching the rest of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .attention import SparsityConfig, activate_attention, batch_percentile_threshold
from .errors import InputError, TrainingFault


def smoothness_loss(attention: torch.Tensor) -> torch.Tensor:
    """Normalized total variation of an attention map.

    Sum of absolute forward differences down columns and along rows, each over
    its valid index range, divided by (H-1)(W-1). Batches are averaged.
    """
    if attention.ndim == 2:
        attention = attention[None, None]
    elif attention.ndim == 3:
        attention = attention[None]
    h, w = attention.shape[-2:]
    if h < 2 or w < 2:
        raise InputError(f"smoothness needs at least a 2x2 map, got {h}x{w}")
    dv = (attention[..., 1:, :] - attention[..., :-1, :]).abs().sum(dim=(-3, -2, -1))
    dh = (attention[..., :, 1:] - attention[..., :, :-1]).abs().sum(dim=(-3, -2, -1))
    return ((dv + dh) / ((h - 1) * (w - 1))).mean()


@dataclass(frozen=True)
class GridTransform:
    """A rigid square-grid bijection applied to the two trailing dimensions."""

    name: str
    apply: Callable[[torch.Tensor], torch.Tensor]

    def __repr__(self):
        return f"GridTransform({self.name})"


def _rot(k):
    return lambda x: torch.rot90(x, k, dims=(-2, -1))


GRID_TRANSFORMS: tuple = (
    GridTransform("hflip", lambda x: torch.flip(x, dims=(-1,))),
    GridTransform("vflip", lambda x: torch.flip(x, dims=(-2,))),
    GridTransform("transpose", lambda x: x.transpose(-2, -1)),
    GridTransform("rot90", _rot(1)),
    GridTransform("rot180", _rot(2)),
    GridTransform("rot270", _rot(3)),
)


@dataclass
class TransformSet:
    """The pool of transforms the equivariance loss draws from."""

    transforms: Sequence[GridTransform] = field(default_factory=lambda: GRID_TRANSFORMS)

    def __post_init__(self):
        if not self.transforms:
            raise InputError("transform set must not be empty")

    def __len__(self):
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)


def sample_transform(transform_set: TransformSet, rng: np.random.Generator) -> GridTransform:
    """Uniform draw of one transform; one draw is used per training batch."""
    return transform_set.transforms[int(rng.integers(len(transform_set)))]


def equivariance_loss(
    image: torch.Tensor,
    net,
    transform: GridTransform,
    sparsity: SparsityConfig,
    confidence: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean squared gap between transform-then-activate and activate-on-transformed.

    Both branches share the threshold computed from the untransformed branch;
    grid transforms permute pixels, so the percentile is unchanged either way.
    Gradients flow through both branches. The image must be square because the
    transform pool contains transposes and quarter rotations.
    """
    if image.ndim == 3:
        image = image.unsqueeze(0)
    h, w = image.shape[-2:]
    if h != w:
        raise InputError(f"equivariance needs square inputs, got {h}x{w}")
    if confidence is None:
        confidence = net(image)
    tau = None
    if sparsity.sparse_enabled:
        tau = batch_percentile_threshold(confidence, sparsity.eta)
    attn_of_transformed = activate_attention(net(transform.apply(image)), sparsity, tau)
    transformed_attn = activate_attention(transform.apply(confidence), sparsity, tau)
    return ((transformed_attn - attn_of_transformed) ** 2).mean()


@dataclass
class LossBundle:
    """Per-batch (or per-epoch mean) loss components and their ablation flags."""

    scale: float
    smooth: float
    equiv: float
    total: float
    smooth_on: bool = True
    equiv_on: bool = True
    sparse_on: bool = True


def total_loss(
    scale,
    smooth,
    equiv,
    smooth_on: bool = True,
    equiv_on: bool = True,
    sparse_on: bool = True,
    smooth_weight: float = 1.0,
    equiv_weight: float = 1.0,
):
    """Unweighted sum of the active terms (weights default to 1 and stay there
    for the reference configuration). Returns (total, LossBundle of floats).

    Works on tensors during training and on plain floats in analysis code.
    Non-finite components abort with the offending term named.
    """
    zero = scale * 0.0
    parts = {
        "scale": scale,
        "smooth": smooth_weight * smooth if smooth_on else zero,
        "equiv": equiv_weight * equiv if equiv_on else zero,
    }
    for name, value in parts.items():
        if not bool(torch.isfinite(torch.as_tensor(float(value)))):
            raise TrainingFault(f"non-finite {name} loss component: {value}")
    total = parts["scale"] + parts["smooth"] + parts["equiv"]
    bundle = LossBundle(
        scale=float(parts["scale"]),
        smooth=float(parts["smooth"]),
        equiv=float(parts["equiv"]),
        total=float(total),
        smooth_on=smooth_on,
        equiv_on=equiv_on,
        sparse_on=sparse_on,
    )
    return total, bundle
