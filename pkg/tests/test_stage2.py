"""Stage-2 ROI classifier contracts."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from fracmil import (
    ArchConfig,
    CalibrationResult,
    ConfigurationError,
    DomainError,
    GenConfig,
    GrayscaleImage,
    ImageLabel,
    MiningConfig,
    MiningLabel,
    RoiSample,
    Stage1Config,
    Stage2Config,
    Stage2Model,
    Subtype,
    TrainConfig,
    classify_roi,
    generate,
    train_stage1,
    train_stage2,
)
from fracmil.core_types import MapGeometry, RoiBox, cell_to_box, crop_roi, keyed_rng
from fracmil.stage2 import _to_tensors, composite_loss

_S2 = Stage2Config(arch=ArchConfig((4, 8)))  # stride 4


def _crop(seed: int, size: int = 16) -> GrayscaleImage:
    rng = keyed_rng(77, "crop", seed)
    return GrayscaleImage(pixels=rng.random((size, size)), id=f"c{seed}")


def _sample(seed: int, label: MiningLabel, subtype: Subtype | None) -> RoiSample:
    geom = MapGeometry(stride=4, roi_size=16, image_height=64, image_width=64)
    box = cell_to_box((4, 4), geom)
    src = GrayscaleImage(pixels=keyed_rng(78, "img", seed).random((64, 64)), id=f"s{seed}")
    return RoiSample(
        crop=crop_roi(src, box, geom),
        box=box,
        mining_label=label,
        cell_prob=0.9 if label is not MiningLabel.RANDOM_NEGATIVE else 0.1,
        subtype=subtype,
    )


def test_classify_roi_outputs_probabilities() -> None:
    torch.manual_seed(0)
    model = Stage2Model(_S2, roi_size=16)
    p_fr, p_sub = classify_roi(model, _crop(0))
    assert 0.0 < p_fr < 1.0
    assert 0.0 < p_sub < 1.0
    again = classify_roi(model, _crop(0))
    assert again == (p_fr, p_sub)


def test_subtype_head_is_optional() -> None:
    torch.manual_seed(0)
    model = Stage2Model(Stage2Config(arch=ArchConfig((4, 8)), with_subtype=False), roi_size=16)
    p_fr, p_sub = classify_roi(model, _crop(1))
    assert 0.0 < p_fr < 1.0
    assert p_sub is None


def test_crop_size_must_match() -> None:
    torch.manual_seed(0)
    model = Stage2Model(_S2, roi_size=16)
    with pytest.raises(DomainError):
        classify_roi(model, _crop(0, size=32))


def test_roi_smaller_than_stride_rejected() -> None:
    with pytest.raises(ConfigurationError):
        Stage2Model(Stage2Config(arch=ArchConfig((4, 8, 8))), roi_size=4)


def test_subtype_gradients_exactly_zero_without_positives() -> None:
    torch.manual_seed(0)
    model = Stage2Model(_S2, roi_size=16)
    negatives = [
        _sample(i, MiningLabel.HARD_NEGATIVE, None) for i in range(3)
    ] + [_sample(9, MiningLabel.RANDOM_NEGATIVE, None)]
    x, y_fr, y_sub = _to_tensors(negatives)
    assert torch.isnan(y_sub).all()
    loss = composite_loss(model, x, y_fr, y_sub)
    loss.backward()
    for p in (model.subtype_head.weight, model.subtype_head.bias):
        assert p.grad is None or bool((p.grad == 0).all())
    assert model.fracture_head.weight.grad is not None
    assert float(model.fracture_head.weight.grad.abs().sum()) > 0.0


def test_subtype_gradients_flow_with_positives() -> None:
    torch.manual_seed(0)
    model = Stage2Model(_S2, roi_size=16)
    mixed = [
        _sample(0, MiningLabel.PROBABLE_POSITIVE, Subtype.HIP),
        _sample(1, MiningLabel.PROBABLE_POSITIVE, Subtype.PELVIC),
        _sample(2, MiningLabel.HARD_NEGATIVE, None),
    ]
    x, y_fr, y_sub = _to_tensors(mixed)
    composite_loss(model, x, y_fr, y_sub).backward()
    assert float(model.subtype_head.weight.grad.abs().sum()) > 0.0


def test_subtype_targets_encode_hip_as_one() -> None:
    samples = [
        _sample(0, MiningLabel.PROBABLE_POSITIVE, Subtype.HIP),
        _sample(1, MiningLabel.PROBABLE_POSITIVE, Subtype.PELVIC),
        _sample(2, MiningLabel.HARD_NEGATIVE, None),
    ]
    _, y_fr, y_sub = _to_tensors(samples)
    assert y_fr.tolist() == [1.0, 1.0, 0.0]
    assert y_sub[0] == 1.0 and y_sub[1] == 0.0 and torch.isnan(y_sub[2])


def _trained_pair(epochs: int = 2):
    data = generate(GenConfig(n_images=14, image_size=64, seed=6))
    s1 = train_stage1(
        data,
        TrainConfig(epochs=2, batch_size=4, learning_rate=1e-3, seed=0),
        model_cfg=Stage1Config(arch=ArchConfig((4, 8))),
    )
    cal = CalibrationResult(
        p_hat=0.4, target_sensitivity=0.99, achieved_sensitivity=1.0, n_positive_images=8
    )
    cfg = TrainConfig(epochs=epochs, batch_size=8, learning_rate=1e-3, seed=0)
    return data, s1, cal, cfg


def test_train_stage2_is_deterministic() -> None:
    data, s1, cal, cfg = _trained_pair()
    a, ma = train_stage2(s1, data, cal, MiningConfig(k=3, seed=0), cfg, model_cfg=_S2)
    b, mb = train_stage2(s1, data, cal, MiningConfig(k=3, seed=0), cfg, model_cfg=_S2)
    assert ma == mb
    for va, vb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(va, vb)
    assert a.history == b.history
    assert a.roi_size == s1.roi_size


def test_train_stage2_manifest_covers_every_epoch() -> None:
    data, s1, cal, cfg = _trained_pair(epochs=3)
    _, manifest = train_stage2(s1, data, cal, MiningConfig(k=3, seed=0), cfg, model_cfg=_S2)
    assert {r.epoch for r in manifest.rows} == {0, 1, 2}
    n_neg = sum(not lbl.fractured for _, lbl in data)
    for epoch in range(3):
        rows = [r for r in manifest.rows if r.epoch == epoch]
        neg_rows = [
            r for r in rows if r.mining_label is not MiningLabel.PROBABLE_POSITIVE
        ]
        assert len(neg_rows) == 3 * n_neg  # negatives always fill to K


def test_train_stage2_requires_positive_rois() -> None:
    data, s1, cal, cfg = _trained_pair()
    negatives = [(im, lbl) for im, lbl in data if not lbl.fractured]
    with pytest.raises(ConfigurationError):
        train_stage2(s1, negatives, cal, MiningConfig(k=3, seed=0), cfg, model_cfg=_S2)
    with pytest.raises(ConfigurationError):
        train_stage2(s1, [], cal, MiningConfig(k=3, seed=0), cfg, model_cfg=_S2)
