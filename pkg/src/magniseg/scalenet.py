"""Residual classifier that predicts the magnification level of an attended tile.

Global average pooling ahead of the final linear layer makes the classifier
size-agnostic: any input of at least 64 px per side works. The full preset is a
34-layer residual network; the desk preset is an 8-layer sibling with the same
interface, small enough to train in tests.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, InputError

MIN_INPUT_SIZE = 64

# widths per stage, residual blocks per stage, stem config
SCALE_PRESETS = {
    # classic 34-layer residual layout: 7x7/2 stem + maxpool, stages 3/4/6/3
    "full": {"widths": (64, 128, 256, 512), "blocks": (3, 4, 6, 3), "big_stem": True},
    # 8 learnable layers: 3x3 stem + three single-block stages + linear head
    "desk": {"widths": (16, 32, 64), "blocks": (1, 1, 1), "big_stem": False},
}


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ScaleNet(nn.Module):
    """Residual convolutional classifier over magnification levels."""

    def __init__(self, num_levels: int, preset: str = "full"):
        super().__init__()
        if num_levels < 2:
            raise ConfigurationError(f"need at least 2 magnification levels, got {num_levels}")
        if preset not in SCALE_PRESETS:
            raise ConfigurationError(
                f"unknown scale-net preset {preset!r}, expected one of {sorted(SCALE_PRESETS)}"
            )
        spec = SCALE_PRESETS[preset]
        self.preset = preset
        self.num_levels = num_levels
        widths, blocks = spec["widths"], spec["blocks"]

        if spec["big_stem"]:
            self.stem = nn.Sequential(
                nn.Conv2d(3, widths[0], 7, stride=2, padding=3, bias=False),
                nn.BatchNorm2d(widths[0]),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(3, stride=2, padding=1),
            )
        else:
            self.stem = nn.Sequential(
                nn.Conv2d(3, widths[0], 3, stride=1, padding=1, bias=False),
                nn.BatchNorm2d(widths[0]),
                nn.ReLU(inplace=True),
            )

        stages = []
        in_ch = widths[0]
        for stage_idx, (width, n_blocks) in enumerate(zip(widths, blocks)):
            for block_idx in range(n_blocks):
                # the big stem already downsamples 4x, so its first stage keeps size
                downsample = block_idx == 0 and (stage_idx > 0 or not spec["big_stem"])
                stages.append(BasicBlock(in_ch, width, 2 if downsample else 1))
                in_ch = width
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(in_ch, num_levels)

    def forward(self, attended: torch.Tensor) -> torch.Tensor:
        """Score each magnification level for a (B, 3, H, W) batch of attended tiles."""
        if attended.ndim != 4 or attended.shape[1] != 3:
            raise InputError(f"expected a (B, 3, H, W) batch, got shape {tuple(attended.shape)}")
        h, w = attended.shape[-2:]
        if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
            raise InputError(f"input {h}x{w} is below the classifier minimum of {MIN_INPUT_SIZE}")
        features = self.stages(self.stem(attended))
        pooled = features.mean(dim=(-2, -1))
        return self.head(pooled)


def scale_probabilities(scores: torch.Tensor) -> torch.Tensor:
    """Softmax over magnification scores."""
    return torch.softmax(scores, dim=-1)


def scale_loss(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of the true level, in stable log-sum-exp form.

    Gradient with respect to the scores is softmax(scores) - onehot(label).
    """
    if scores.ndim == 1:
        scores = scores.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long, device=scores.device).reshape(-1)
    n_levels = scores.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_levels):
        raise InputError(f"label out of range [0, {n_levels}) in {labels.tolist()}")
    return F.cross_entropy(scores, labels)
