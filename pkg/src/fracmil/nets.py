"""Small fully-convolutional backbones shared by both stages.

Each stage halves the resolution with a 2x2 max pool, so a stack of k
stages has stride 2**k and its output grid is exactly
(H // 2**k, W // 2**k) for any input size; nested floor-halving equals
one floor division, which keeps the map geometry contract exact.

GroupNorm with a single group is used instead of batch norm: it is
batch-size independent and keeps training deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core_types import ConfigurationError, DomainError
from .pooling import PoolKind, PoolingConfig


@dataclass(frozen=True)
class ArchConfig:
    """Widths of the conv stages; stride is 2 per stage."""

    widths: tuple[int, ...] = (8, 16, 32, 32)
    convs_per_stage: int = 1

    def __post_init__(self) -> None:
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise DomainError(f"bad stage widths {self.widths}")
        if self.convs_per_stage < 1:
            raise DomainError("convs_per_stage must be >= 1")

    @property
    def stride(self) -> int:
        return 2 ** len(self.widths)

    @property
    def out_channels(self) -> int:
        return self.widths[-1]


class ConvStack(nn.Module):
    """Conv/GroupNorm/ReLU stages, each followed by a 2x2 max pool."""

    def __init__(self, arch: ArchConfig, in_channels: int = 1) -> None:
        super().__init__()
        layers: list[nn.Module] = []
        prev = in_channels
        for width in arch.widths:
            for _ in range(arch.convs_per_stage):
                layers.append(nn.Conv2d(prev, width, kernel_size=3, padding=1))
                layers.append(nn.GroupNorm(1, width))
                layers.append(nn.ReLU(inplace=True))
                prev = width
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        self.body = nn.Sequential(*layers)
        self.arch = arch

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def enable_determinism() -> None:
    torch.use_deterministic_algorithms(True)


def pool_map(prob_map: torch.Tensor, cfg: PoolingConfig) -> torch.Tensor:
    """Collapse [B, 1, h, w] cell probabilities to [B] image scores."""
    if prob_map.ndim != 4 or prob_map.shape[1] != 1:
        raise DomainError(f"expected [B, 1, h, w] map, got {tuple(prob_map.shape)}")
    flat = prob_map.flatten(1)
    n = flat.shape[1]
    if cfg.kind is PoolKind.LSE:
        return (torch.logsumexp(cfg.r * flat, dim=1) - math.log(n)) / cfg.r
    if cfg.kind is PoolKind.MAX:
        return flat.amax(dim=1)
    return flat.mean(dim=1)


def pool_features(features: torch.Tensor, cfg: PoolingConfig) -> torch.Tensor:
    """Collapse [B, C, h, w] features to [B, C, 1, 1], per channel."""
    if features.ndim != 4:
        raise DomainError(f"expected [B, C, h, w] features, got {tuple(features.shape)}")
    b, c = features.shape[:2]
    flat = features.flatten(2)
    n = flat.shape[2]
    if cfg.kind is PoolKind.LSE:
        pooled = (torch.logsumexp(cfg.r * flat, dim=2) - math.log(n)) / cfg.r
    elif cfg.kind is PoolKind.MAX:
        pooled = flat.amax(dim=2)
    else:
        pooled = flat.mean(dim=2)
    return pooled.reshape(b, c, 1, 1)


def stack_images(images: list) -> torch.Tensor:
    """[N, 1, H, W] float32 batch; all images must share one shape."""
    shapes = {im.pixels.shape for im in images}
    if len(shapes) != 1:
        raise ConfigurationError(f"images must share one shape to batch, got {shapes}")
    arr = np.stack([im.pixels for im in images]).astype("float32")
    return torch.from_numpy(arr).unsqueeze(1)
