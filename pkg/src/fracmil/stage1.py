"""Stage 1: fully-convolutional classifier trained on image-level labels.

The network maps an image to a grid of per-cell fracture probabilities
(1x1 conv head plus sigmoid on top of a conv backbone). Training never
sees pixel-level labels: the map is collapsed to one image score by the
configured pooling (log-sum-exp by default) and penalised with binary
cross-entropy against the image label. Because LSE gives every cell a
positive gradient weight, the map localises fractures as a side effect.

At inference time the image score is the maximum cell probability, which
also names the cell used for the stage-2 crop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core_types import (
    ConfigurationError,
    DomainError,
    GrayscaleImage,
    ImageLabel,
    MapGeometry,
    ProbabilityMap,
    keyed_rng,
)
from .nets import ArchConfig, ConvStack, enable_determinism, pool_features, pool_map, stack_images
from .pooling import PoolingConfig

_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings; defaults follow the reference recipe
    (Adam, batch 8, lr 1e-5, 100 epochs, lr / 10 on validation plateaus)."""

    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-5
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 < self.plateau_factor < 1.0):
            raise DomainError(f"plateau_factor must lie in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 0:
            raise DomainError("plateau_patience must be >= 0")


@dataclass(frozen=True)
class Stage1Config:
    """Architecture and pooling choices for the stage-1 network."""

    arch: ArchConfig = ArchConfig()
    pooling: PoolingConfig = PoolingConfig()
    roi_size: int | None = None  # defaults to 4 * stride
    hflip: bool = False  # optional horizontal-flip augmentation

    def resolved_roi_size(self) -> int:
        return self.roi_size if self.roi_size is not None else 4 * self.arch.stride


class Stage1Model(nn.Module):
    """Backbone plus 1x1 probability head plus pooling configuration."""

    def __init__(self, cfg: Stage1Config) -> None:
        super().__init__()
        self.backbone = ConvStack(cfg.arch)
        self.head = nn.Conv2d(cfg.arch.out_channels, 1, kernel_size=1)
        # zero head: maps start flat at 0.5 regardless of backbone init
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.cfg = cfg
        self.stride = cfg.arch.stride
        self.roi_size = cfg.resolved_roi_size()
        self.history: list[dict] = []

    def logit_map(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))

    def image_scores(self, x: torch.Tensor) -> torch.Tensor:
        """Pooled training scores in (0, 1), shape [B]."""
        pooling = self.cfg.pooling
        if pooling.on_features:
            feats = pool_features(self.backbone(x), pooling)
            logits = self.head(feats).flatten(1).squeeze(1)
            scores = torch.sigmoid(logits)
        else:
            probs = torch.sigmoid(self.logit_map(x))
            scores = pool_map(probs, pooling)
        return scores.clamp(_EPS, 1.0 - _EPS)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.image_scores(x)


def forward_map(model: Stage1Model, image: GrayscaleImage) -> ProbabilityMap:
    """Run the network on one image and wrap the cell probabilities."""
    if image.height < model.stride or image.width < model.stride:
        raise DomainError(
            f"image {image.width}x{image.height} smaller than stride {model.stride}"
        )
    enable_determinism()
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(image.pixels.astype(np.float32))[None, None]
        probs = torch.sigmoid(model.logit_map(x))[0, 0].double().numpy()
    geometry = MapGeometry(
        stride=model.stride,
        roi_size=model.roi_size,
        image_height=image.height,
        image_width=image.width,
    )
    return ProbabilityMap(values=np.clip(probs, _EPS, 1.0 - _EPS), geometry=geometry)


def _bce(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    s = scores.clamp(_EPS, 1.0 - _EPS)
    return -(targets * torch.log(s) + (1.0 - targets) * torch.log(1.0 - s)).mean()


def image_loss(model: Stage1Model, image: GrayscaleImage, label: ImageLabel) -> float:
    """Binary cross-entropy of the pooled score against the image label."""
    enable_determinism()
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(image.pixels.astype(np.float32))[None, None]
        score = model.image_scores(x)
        target = torch.tensor([1.0 if label.fractured else 0.0])
        return float(_bce(score, target))


def _epoch_loss(model: Stage1Model, x: torch.Tensor, y: torch.Tensor, batch: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(x), batch):
            xb, yb = x[start : start + batch], y[start : start + batch]
            total += float(_bce(model.image_scores(xb), yb)) * len(xb)
    return total / len(x)


def train_stage1(
    dataset: list[tuple[GrayscaleImage, ImageLabel]],
    cfg: TrainConfig,
    model_cfg: Stage1Config = Stage1Config(),
    val_dataset: list[tuple[GrayscaleImage, ImageLabel]] | None = None,
) -> Stage1Model:
    """Train from image-level labels only. Deterministic for a fixed seed.

    The plateau scheduler watches the validation loss when a validation
    set is supplied, otherwise the training loss.
    """
    if not dataset:
        raise ConfigurationError("empty training set")
    labels = [lbl.fractured for _, lbl in dataset]
    if all(labels) or not any(labels):
        raise ConfigurationError("training set must contain both classes")

    enable_determinism()
    torch.manual_seed(cfg.seed)
    model = Stage1Model(model_cfg)

    x = stack_images([im for im, _ in dataset])
    y = torch.tensor([1.0 if f else 0.0 for f in labels])
    if val_dataset:
        xv = stack_images([im for im, _ in val_dataset])
        yv = torch.tensor([1.0 if lbl.fractured else 0.0 for _, lbl in val_dataset])
    else:
        xv, yv = x, y

    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, factor=cfg.plateau_factor, patience=cfg.plateau_patience
    )
    for epoch in range(cfg.epochs):
        order = keyed_rng(cfg.seed, "stage1_order", epoch).permutation(len(dataset))
        model.train()
        train_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            xb = x[idx]
            if model_cfg.hflip:
                flips = keyed_rng(cfg.seed, "stage1_flip", epoch, start).random(len(idx)) < 0.5
                if flips.any():
                    xb = xb.clone()
                    xb[torch.from_numpy(flips)] = torch.flip(xb[torch.from_numpy(flips)], dims=[3])
            loss = _bce(model.image_scores(xb), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_loss += float(loss.detach()) * len(idx)
        val_loss = _epoch_loss(model, xv, yv, cfg.batch_size)
        sched.step(val_loss)
        model.history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss / len(dataset),
                "val_loss": val_loss,
                "lr": opt.param_groups[0]["lr"],
            }
        )
    model.eval()
    return model
