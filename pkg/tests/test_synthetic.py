"""Synthetic dataset generator contracts."""

from __future__ import annotations

import numpy as np
import pytest

from fracmil import (
    DomainError,
    GenConfig,
    GenerationError,
    Subtype,
    generate,
    generate_detailed,
    load_dataset,
    save_dataset,
)
from fracmil.core_types import keyed_rng
from fracmil.synthetic import (
    _MIN_LESION_PIXELS,
    _assignments,
    _plant_lesion,
    subtype_for_center,
    zone_bounds,
)

_CFG = GenConfig(n_images=40, image_size=64, seed=5)


@pytest.fixture(scope="module")
def detailed():
    return generate_detailed(_CFG)


def test_config_validation() -> None:
    with pytest.raises(DomainError):
        GenConfig(n_images=0)
    with pytest.raises(DomainError):
        GenConfig(n_images=4, image_size=32)
    with pytest.raises(DomainError):
        GenConfig(n_images=4, positive_fraction=1.5)
    with pytest.raises(DomainError):
        GenConfig(n_images=4, hip_fraction=-0.1)
    with pytest.raises(DomainError):
        GenConfig(n_images=4, distractor_count=(5, 3))
    with pytest.raises(DomainError):
        GenConfig(n_images=4, lesion_contrast=(0.0, 0.2))
    with pytest.raises(DomainError):
        GenConfig(n_images=4, lesion_contrast=(0.3, 0.2))


def test_class_and_subtype_counts(detailed) -> None:
    # round(40 * 0.63) positives, round(25 * 0.71) of them hip
    kinds = _assignments(_CFG)
    assert len(kinds) == 40
    assert sum(k is not None for k in kinds) == 25
    assert sum(k is Subtype.HIP for k in kinds) == 18
    labels = [g.label for g in detailed]
    assert sum(lbl.fractured for lbl in labels) == 25
    assert sum(lbl.subtype is Subtype.HIP for lbl in labels) == 18
    assert all(bool(lbl.gt_boxes) == lbl.fractured for lbl in labels)


def test_pixels_valid_and_quantized(detailed) -> None:
    for g in detailed:
        px = g.image.pixels
        assert px.shape == (64, 64)
        assert px.min() >= 0.0 and px.max() <= 1.0
        # 8-bit quantisation: every value is an exact multiple of 1/255
        scaled = px * 255.0
        assert np.allclose(scaled, np.round(scaled), atol=1e-9)


def test_regeneration_is_bit_identical(detailed) -> None:
    again = generate_detailed(_CFG)
    assert len(again) == len(detailed)
    for a, b in zip(detailed, again):
        assert (a.image.pixels == b.image.pixels).all()
        assert a.label == b.label
        assert a.image.id == b.image.id


def test_dataset_reload_is_bit_identical(detailed, tmp_path) -> None:
    pairs = [(g.image, g.label) for g in detailed]
    save_dataset(pairs, tmp_path / "ds")
    loaded = load_dataset(tmp_path / "ds")
    assert len(loaded) == len(pairs)
    for (im, lbl), (im2, lbl2) in zip(pairs, loaded):
        assert im.id == im2.id
        assert (im.pixels == im2.pixels).all()
        assert lbl == lbl2


def test_lesions_stay_in_their_zone(detailed) -> None:
    b1, b2 = zone_bounds(_CFG.image_size)
    assert (b1, b2) == (21, 43)
    for g in detailed:
        if not g.label.fractured:
            continue
        ((x0, y0, x1, y1),) = g.label.gt_boxes
        assert 0 <= x0 < x1 <= _CFG.image_size
        assert 0 <= y0 < y1 <= _CFG.image_size
        cx = (x0 + x1) / 2.0
        assert subtype_for_center(cx, _CFG.image_size) is g.label.subtype


def test_lesions_are_big_enough_to_matter(detailed) -> None:
    for g in detailed:
        if g.label.fractured:
            assert g.lesion_pixels >= _MIN_LESION_PIXELS
            ((x0, y0, x1, y1),) = g.label.gt_boxes
            assert x1 - x0 > 8 and y1 - y0 > 8


def test_lesion_darkens_its_region(detailed) -> None:
    # planted lesions subtract contrast, so the gt box must contain pixels
    # meaningfully darker than the box-wide median
    for g in detailed:
        if not g.label.fractured:
            continue
        ((x0, y0, x1, y1),) = g.label.gt_boxes
        region = g.image.pixels[y0:y1, x0:x1]
        assert region.min() < np.median(region) - 0.05


def test_generate_matches_detailed(detailed) -> None:
    pairs = generate(_CFG)
    assert [(im.id) for im, _ in pairs] == [g.image.id for g in detailed]
    assert all((im.pixels == g.image.pixels).all() for (im, _), g in zip(pairs, detailed))


def test_unplaceable_lesion_raises() -> None:
    # a structure mask with no bright pixels can never satisfy the
    # overlap requirement, so placement must give up loudly
    anatomy = {
        "disks": [(10.0, 32.0, 5.0), (54.0, 32.0, 5.0)],
        "band": (32.0, 32.0, 6.0, 9.0, 0.0),
        "structure_mask": np.zeros((64, 64), dtype=bool),
    }
    canvas = np.full((64, 64), 0.4)
    with pytest.raises(GenerationError):
        _plant_lesion(canvas, anatomy, Subtype.HIP, _CFG, keyed_rng(0, "t"))


def test_different_seeds_differ() -> None:
    a = generate(GenConfig(n_images=3, image_size=64, seed=1))
    b = generate(GenConfig(n_images=3, image_size=64, seed=2))
    assert any((x.pixels != y.pixels).any() for (x, _), (y, _) in zip(a, b))
