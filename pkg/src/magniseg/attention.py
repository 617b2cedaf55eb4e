"""Attention network and the sparse activation that turns confidence into attention.

The network is a dilated fully-convolutional stack that regresses a single-channel
confidence map the size of its input. Sparsity comes from a batch percentile
threshold: the activation is a steep sigmoid centered on that threshold, so only
the top fraction of confidence values light up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, InputError

MIN_INPUT_SIZE = 64

# (channels per hidden layer, dilation per layer). Stride 1 and padding equal
# to the dilation throughout, so spatial size is preserved.
ATTENTION_PRESETS = {
    "full": ((16, 32, 64, 64, 64, 32), (1, 1, 2, 4, 8, 1, 1)),
    "desk": ((8, 16, 32, 32, 32, 16), (1, 1, 2, 4, 8, 1, 1)),
}


@dataclass
class SparsityConfig:
    """Percentile sparsity parameters for the compressed sigmoid.

    The threshold tau is derived per batch (see batch_percentile_threshold) and
    deliberately not stored here. With sparse_enabled off, activation falls back
    to a plain sigmoid and tau is never computed.
    """

    eta: float = 93.0
    r: float = 20.0
    sparse_enabled: bool = True

    def validate(self) -> "SparsityConfig":
        if not 0.0 < self.eta < 100.0:
            raise ConfigurationError(f"eta must lie in (0, 100), got {self.eta}")
        if self.r <= 0:
            raise ConfigurationError(f"sigmoid compression r must be positive, got {self.r}")
        return self

    def to_dict(self) -> dict:
        return {"eta": self.eta, "r": self.r, "sparse_enabled": self.sparse_enabled}

    @classmethod
    def from_dict(cls, d: dict) -> "SparsityConfig":
        return cls(**d).validate()


class AttentionNet(nn.Module):
    """Dilated convolutional regressor mapping an RGB image to a confidence map.

    Seven 3x3 convolutions, stride 1, dilations rising to 8 and back so every
    output pixel sees a wide neighborhood. Leaky ReLU between layers, no
    activation on the last one: the output is an unbounded confidence map.
    """

    def __init__(self, preset: str = "full", padding_mode: str = "zeros"):
        super().__init__()
        if preset not in ATTENTION_PRESETS:
            raise ConfigurationError(
                f"unknown attention preset {preset!r}, expected one of {sorted(ATTENTION_PRESETS)}"
            )
        channels, dilations = ATTENTION_PRESETS[preset]
        self.preset = preset
        widths = (3,) + channels + (1,)
        layers = []
        for i, dilation in enumerate(dilations):
            layers.append(
                nn.Conv2d(
                    widths[i],
                    widths[i + 1],
                    kernel_size=3,
                    stride=1,
                    padding=dilation,
                    dilation=dilation,
                    padding_mode=padding_mode,
                )
            )
            if i < len(dilations) - 1:
                layers.append(nn.LeakyReLU(0.1, inplace=True))
        self.layers = nn.Sequential(*layers)
        self._init_weights()

    def _init_weights(self):
        # variance-preserving init for the leaky stack; the torch default shrinks
        # activations so much that the confidence map degenerates to a constant
        # and the compressed sigmoid never leaves its midpoint
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, a=0.1, nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Regress confidence for a (B, 3, H, W) batch; returns (B, 1, H, W)."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise InputError(f"expected a (B, 3, H, W) batch, got shape {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h < MIN_INPUT_SIZE or w < MIN_INPUT_SIZE:
            raise InputError(
                f"input {h}x{w} is below the receptive-field-safe minimum of {MIN_INPUT_SIZE}"
            )
        return self.layers(image)


def batch_percentile_threshold(confidence: torch.Tensor, eta: float) -> torch.Tensor:
    """Mean over the batch of each map's eta-th percentile confidence value.

    Per map the threshold is the order statistic that leaves exactly
    k = ceil((1 - eta/100) * HW) values strictly above it when there are no
    ties, i.e. the (HW - k)-th smallest value. The result is detached: the
    threshold acts as a constant during differentiation.
    """
    if not 0.0 < eta < 100.0:
        raise ConfigurationError(f"eta must lie in (0, 100), got {eta}")
    if confidence.ndim < 2 or confidence.numel() == 0:
        raise InputError("confidence batch must be a non-empty (B, ...) tensor")
    flat = confidence.reshape(confidence.shape[0], -1)
    m = flat.shape[1]
    k_above = math.ceil((1.0 - eta / 100.0) * m)
    # kthvalue is 1-based ascending; clamp keeps tiny maps / extreme eta legal.
    k_index = max(m - k_above, 1)
    per_map = torch.kthvalue(flat, k_index, dim=1).values
    return per_map.mean().detach()


def compressed_sigmoid(confidence: torch.Tensor, tau, r: float) -> torch.Tensor:
    """Steep sigmoid 1 / (1 + exp(-r * (a - tau))) producing near-binary maps."""
    return torch.sigmoid(r * (confidence - tau))


def activate_attention(confidence: torch.Tensor, sparsity: SparsityConfig, tau=None) -> torch.Tensor:
    """Turn a confidence map into an attention map under the sparsity config.

    With sparsity enabled a threshold is required (computed from the batch when
    not supplied). Without it this is a plain sigmoid and tau is ignored.
    """
    if not sparsity.sparse_enabled:
        return torch.sigmoid(confidence)
    if tau is None:
        tau = batch_percentile_threshold(confidence, sparsity.eta)
    return compressed_sigmoid(confidence, tau, sparsity.r)


def apply_attention(image: torch.Tensor, attention: torch.Tensor) -> torch.Tensor:
    """Elementwise product J = A * I, broadcasting one attention channel over RGB."""
    if image.shape[-2:] != attention.shape[-2:]:
        raise InputError(
            f"spatial shapes differ: image {tuple(image.shape[-2:])} vs "
            f"attention {tuple(attention.shape[-2:])}"
        )
    return attention * image


@torch.no_grad()
def infer_attention_map(net: AttentionNet, image: torch.Tensor, sparsity: SparsityConfig) -> torch.Tensor:
    """Attention for one image with its own percentile threshold (batch of one).

    Accepts (3, H, W) or (1, 3, H, W); returns the (H, W) attention map.
    """
    if image.ndim == 3:
        image = image.unsqueeze(0)
    confidence = net(image)
    return activate_attention(confidence, sparsity)[0, 0]
