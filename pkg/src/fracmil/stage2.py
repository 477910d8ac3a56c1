"""Stage 2: a localized classifier trained on mined ROI crops.

The stage-1 map nominates suspicious cells; this network re-examines
each one at full resolution. It is deliberately smaller than stage 1:
the crop is already localised, so the job is to reject stage-1 false
positives, not to search.

Two sigmoid heads share one backbone. The fracture head trains on every
mined ROI with the mining label as target. The subtype head (hip vs
pelvic) trains only on probable positives; a batch without any
contributes exactly zero gradient to it.

Mining is re-run every epoch against the cached stage-1 maps, so the
crop population resamples while the candidate sets stay fixed.
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
    MiningLabel,
    ProbabilityMap,
    RoiSample,
    Subtype,
    keyed_rng,
)
from .mining import CalibrationResult, MiningConfig, MiningManifest, mine_rois
from .nets import ArchConfig, ConvStack, enable_determinism
from .stage1 import Stage1Model, TrainConfig, forward_map

_EPS = 1e-7


@dataclass(frozen=True)
class Stage2Config:
    """Backbone for the ROI classifier; smaller than stage 1 by design."""

    arch: ArchConfig = ArchConfig(widths=(12, 24, 48))
    with_subtype: bool = True


class Stage2Model(nn.Module):
    def __init__(self, cfg: Stage2Config, roi_size: int) -> None:
        super().__init__()
        if roi_size < cfg.arch.stride:
            raise ConfigurationError(
                f"roi_size {roi_size} smaller than stage-2 stride {cfg.arch.stride}"
            )
        self.backbone = ConvStack(cfg.arch)
        self.fracture_head = nn.Linear(cfg.arch.out_channels, 1)
        self.subtype_head = nn.Linear(cfg.arch.out_channels, 1) if cfg.with_subtype else None
        self.cfg = cfg
        self.roi_size = roi_size
        self.history: list[dict] = []

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x).mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Fracture and subtype probabilities, each in (0, 1), shape [B]."""
        feats = self.features(x)
        p_fr = torch.sigmoid(self.fracture_head(feats).squeeze(1)).clamp(_EPS, 1 - _EPS)
        p_sub = None
        if self.subtype_head is not None:
            p_sub = torch.sigmoid(self.subtype_head(feats).squeeze(1)).clamp(_EPS, 1 - _EPS)
        return p_fr, p_sub


def classify_roi(model: Stage2Model, crop: GrayscaleImage) -> tuple[float, float | None]:
    """Score one ROI crop: (fracture probability, hip-vs-pelvic probability).

    The subtype probability is P(hip); None when the head is disabled.
    """
    if crop.pixels.shape != (model.roi_size, model.roi_size):
        raise DomainError(
            f"crop is {crop.pixels.shape}, model expects "
            f"({model.roi_size}, {model.roi_size})"
        )
    enable_determinism()
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(crop.pixels.astype(np.float32))[None, None]
        p_fr, p_sub = model(x)
    return float(p_fr[0]), (float(p_sub[0]) if p_sub is not None else None)


def _bce(scores: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    s = scores.clamp(_EPS, 1.0 - _EPS)
    return -(targets * torch.log(s) + (1.0 - targets) * torch.log(1.0 - s)).mean()


def _to_tensors(samples: list[RoiSample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    crops = np.stack([s.crop.pixels for s in samples]).astype(np.float32)
    y_fr = np.array(
        [1.0 if s.mining_label is MiningLabel.PROBABLE_POSITIVE else 0.0 for s in samples],
        dtype=np.float32,
    )
    y_sub = np.array(
        [
            (1.0 if s.subtype is Subtype.HIP else 0.0) if s.subtype is not None else np.nan
            for s in samples
        ],
        dtype=np.float32,
    )
    return (
        torch.from_numpy(crops).unsqueeze(1),
        torch.from_numpy(y_fr),
        torch.from_numpy(y_sub),
    )


def composite_loss(
    model: Stage2Model, x: torch.Tensor, y_fr: torch.Tensor, y_sub: torch.Tensor
) -> torch.Tensor:
    """Fracture BCE plus subtype BCE over the rows that carry a subtype.

    When no row does, the subtype term is absent entirely, so the subtype
    head's gradients are exactly zero, not merely small.
    """
    p_fr, p_sub = model(x)
    loss = _bce(p_fr, y_fr)
    if p_sub is not None:
        mask = torch.isfinite(y_sub)
        if bool(mask.any()):
            loss = loss + _bce(p_sub[mask], y_sub[mask])
    return loss


def _mine_epoch(
    dataset: list[tuple[GrayscaleImage, ImageLabel]],
    maps: dict[str, ProbabilityMap],
    p_hat: float,
    cfg: MiningConfig,
    epoch: int,
) -> tuple[list[RoiSample], list, list[tuple[str, int]]]:
    samples: list[RoiSample] = []
    rows: list = []
    misses: list[tuple[str, int]] = []
    for image, label in dataset:
        mined = mine_rois(image, label, maps[image.id], p_hat, cfg, epoch)
        if label.fractured and not mined:
            misses.append((image.id, epoch))
        samples.extend(mined)
        rows.extend(MiningManifest.from_samples(image.id, epoch, mined))
    return samples, rows, misses


def train_stage2(
    stage1: Stage1Model,
    dataset: list[tuple[GrayscaleImage, ImageLabel]],
    calibration: CalibrationResult,
    mining_cfg: MiningConfig,
    cfg: TrainConfig,
    model_cfg: Stage2Config = Stage2Config(),
    val_dataset: list[tuple[GrayscaleImage, ImageLabel]] | None = None,
) -> tuple[Stage2Model, MiningManifest]:
    """Train the ROI classifier on per-epoch re-mined crops.

    Stage-1 maps are computed once up front and cached; only the sampling
    among candidate cells changes between epochs. Raises if mining yields
    no positive ROIs at all, since the fracture head would then never see
    a positive example.
    """
    if not dataset:
        raise ConfigurationError("empty training set")
    enable_determinism()

    maps = {image.id: forward_map(stage1, image) for image, _ in dataset}
    torch.manual_seed(cfg.seed)
    model = Stage2Model(model_cfg, roi_size=stage1.roi_size)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.ReduceLROnPlateau(
        opt, factor=cfg.plateau_factor, patience=cfg.plateau_patience
    )

    val_tensors = None
    if val_dataset:
        val_maps = {image.id: forward_map(stage1, image) for image, _ in val_dataset}
        val_samples, _, _ = _mine_epoch(val_dataset, val_maps, calibration.p_hat, mining_cfg, 0)
        if val_samples:
            val_tensors = _to_tensors(val_samples)

    all_rows: list = []
    all_misses: list[tuple[str, int]] = []
    for epoch in range(cfg.epochs):
        samples, rows, misses = _mine_epoch(
            dataset, maps, calibration.p_hat, mining_cfg, epoch
        )
        all_rows.extend(rows)
        all_misses.extend(misses)
        if epoch == 0 and not any(
            s.mining_label is MiningLabel.PROBABLE_POSITIVE for s in samples
        ):
            raise ConfigurationError(
                "mining produced zero positive ROIs; stage-1 maps or the "
                "calibration threshold are unusable"
            )
        x, y_fr, y_sub = _to_tensors(samples)
        order = keyed_rng(cfg.seed, "stage2_order", epoch).permutation(len(samples))
        model.train()
        train_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            loss = composite_loss(model, x[idx], y_fr[idx], y_sub[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_loss += float(loss.detach()) * len(idx)
        train_loss /= len(samples)

        model.eval()
        if val_tensors is not None:
            with torch.no_grad():
                val_loss = float(composite_loss(model, *val_tensors))
        else:
            val_loss = train_loss
        sched.step(val_loss)
        model.history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "n_rois": len(samples),
                "lr": opt.param_groups[0]["lr"],
            }
        )
    model.eval()
    return model, MiningManifest(rows=tuple(all_rows), misses=tuple(all_misses))
