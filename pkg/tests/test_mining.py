"""ROI mining, threshold calibration, and manifest contracts."""

from __future__ import annotations

import numpy as np
import pytest

from fracmil import (
    DomainError,
    GrayscaleImage,
    ImageLabel,
    MapGeometry,
    MiningConfig,
    MiningLabel,
    MiningManifest,
    ProbabilityMap,
    Subtype,
    calibrate_threshold,
    candidate_set,
    mine_rois,
    mining_label_accuracy,
)
from fracmil.core_types import keyed_rng
from fracmil.mining import MiningRow, _iou

_GEOM = MapGeometry(stride=16, roi_size=64, image_height=128, image_width=128)
_IMG = GrayscaleImage(pixels=np.full((128, 128), 0.5), id="m1")
_POS = ImageLabel(fractured=True, subtype=Subtype.HIP, gt_boxes=((40, 40, 80, 80),))
_NEG = ImageLabel(fractured=False)


def _pmap(values: np.ndarray) -> ProbabilityMap:
    return ProbabilityMap(values=values, geometry=_GEOM)


def _three_candidate_map() -> ProbabilityMap:
    vals = np.full((8, 8), 0.1)
    vals[2, 3], vals[5, 5], vals[0, 7] = 0.9, 0.95, 0.92
    return _pmap(vals)


# -- calibration -------------------------------------------------------------


def test_calibration_hand_example() -> None:
    cal = calibrate_threshold([0.95, 0.9, 0.85, 0.2], 0.75)
    assert cal.p_hat == 0.85
    assert cal.achieved_sensitivity == 0.75
    assert cal.n_positive_images == 4


def test_calibration_keeps_everything_at_target_one() -> None:
    cal = calibrate_threshold([0.95, 0.9, 0.85, 0.2], 1.0)
    assert cal.p_hat == 0.2
    assert cal.achieved_sensitivity == 1.0


def test_calibration_threshold_is_largest_valid() -> None:
    # every observed score (plus 0) is a candidate; enumeration must agree
    for trial in range(60):
        rng = keyed_rng(202, "calib", trial)
        scores = rng.random(int(rng.integers(1, 40)))
        if trial % 3 == 0:
            scores = np.round(scores, 1)  # force ties
        target = float(rng.uniform(0.05, 1.0))
        cal = calibrate_threshold(scores, target)
        grid = np.unique(np.concatenate([scores, [0.0]]))
        valid = [t for t in grid if np.mean(scores >= t) >= target]
        assert cal.p_hat == max(valid)
        assert cal.achieved_sensitivity == np.mean(scores >= cal.p_hat)


def test_calibration_input_validation() -> None:
    with pytest.raises(DomainError):
        calibrate_threshold([], 0.99)
    with pytest.raises(DomainError):
        calibrate_threshold([0.5, 1.2], 0.99)
    with pytest.raises(DomainError):
        calibrate_threshold([0.5], 0.0)


# -- candidate sets ----------------------------------------------------------


def test_candidate_set_is_row_major_and_closed() -> None:
    pmap = _three_candidate_map()
    assert candidate_set(pmap, 0.9) == [(0, 7), (2, 3), (5, 5)]
    assert candidate_set(pmap, 0.95) == [(5, 5)]  # threshold is inclusive
    assert candidate_set(pmap, 0.96) == []
    assert len(candidate_set(pmap, 0.0)) == 64
    with pytest.raises(DomainError):
        candidate_set(pmap, 1.5)


# -- mining ------------------------------------------------------------------


def test_fractured_image_yields_probable_positives() -> None:
    samples = mine_rois(_IMG, _POS, _three_candidate_map(), 0.9, MiningConfig(), 0)
    assert len(samples) == 3  # fewer candidates than K
    assert all(s.mining_label is MiningLabel.PROBABLE_POSITIVE for s in samples)
    assert all(s.subtype is Subtype.HIP for s in samples)
    assert {s.box.source_cell for s in samples} == {(0, 7), (2, 3), (5, 5)}
    for s in samples:
        assert s.crop.pixels.shape == (64, 64)
        assert s.cell_prob >= 0.9


def test_fractured_image_caps_at_k() -> None:
    vals = np.linspace(0.5, 0.99, 64).reshape(8, 8)
    samples = mine_rois(_IMG, _POS, _pmap(vals), 0.6, MiningConfig(k=5), 0)
    assert len(samples) == 5
    chosen = [s.box.source_cell for s in samples]
    assert all(vals[c] >= 0.6 for c in chosen)


def test_fractured_image_with_no_candidates_yields_nothing() -> None:
    samples = mine_rois(_IMG, _POS, _three_candidate_map(), 0.99, MiningConfig(), 0)
    assert samples == []


def test_negative_image_gets_exactly_k_with_padding() -> None:
    samples = mine_rois(_IMG, _NEG, _three_candidate_map(), 0.9, MiningConfig(k=5), 0)
    assert len(samples) == 5
    hard = [s for s in samples if s.mining_label is MiningLabel.HARD_NEGATIVE]
    rand = [s for s in samples if s.mining_label is MiningLabel.RANDOM_NEGATIVE]
    assert len(hard) == 3 and len(rand) == 2
    assert {s.box.source_cell for s in hard} == {(0, 7), (2, 3), (5, 5)}
    for s in rand:  # padding comes from below-threshold cells only
        assert s.box.source_cell not in {(0, 7), (2, 3), (5, 5)}
        assert s.cell_prob < 0.9
    assert all(s.subtype is None for s in samples)


def test_negative_image_all_above_threshold_has_no_padding() -> None:
    vals = np.full((8, 8), 0.95)
    samples = mine_rois(_IMG, _NEG, _pmap(vals), 0.9, MiningConfig(k=5), 0)
    assert len(samples) == 5
    assert all(s.mining_label is MiningLabel.HARD_NEGATIVE for s in samples)


def test_mining_rerun_identity_and_epoch_freshness() -> None:
    vals = np.linspace(0.5, 0.99, 64).reshape(8, 8)
    pmap = _pmap(vals)
    cfg = MiningConfig(k=5, seed=0)
    a = mine_rois(_IMG, _POS, pmap, 0.6, cfg, epoch=0)
    b = mine_rois(_IMG, _POS, pmap, 0.6, cfg, epoch=0)
    c = mine_rois(_IMG, _POS, pmap, 0.6, cfg, epoch=1)
    assert [s.box for s in a] == [s.box for s in b]
    assert [s.box for s in a] != [s.box for s in c]


def test_mining_rejects_mismatched_geometry() -> None:
    small = GrayscaleImage(pixels=np.full((64, 64), 0.5), id="small")
    with pytest.raises(DomainError):
        mine_rois(small, _NEG, _three_candidate_map(), 0.9, MiningConfig(), 0)


def test_mining_config_validation() -> None:
    with pytest.raises(DomainError):
        MiningConfig(k=0)


# -- manifest ----------------------------------------------------------------


def _manifest_from(samples, image_id: str, epoch: int, misses=()) -> MiningManifest:
    return MiningManifest(
        rows=tuple(MiningManifest.from_samples(image_id, epoch, samples)),
        misses=tuple(misses),
    )


def test_manifest_round_trip(tmp_path) -> None:
    samples = mine_rois(_IMG, _NEG, _three_candidate_map(), 0.9, MiningConfig(k=5), 2)
    manifest = _manifest_from(samples, "m1", 2, misses=[("m9", 2)])
    path = tmp_path / "mine.tsv"
    manifest.write_tsv(path)
    again = MiningManifest.read_tsv(path)
    assert again == manifest
    assert (tmp_path / "mine.misses.tsv").is_file()


def test_manifest_write_is_byte_stable(tmp_path) -> None:
    samples = mine_rois(_IMG, _POS, _three_candidate_map(), 0.9, MiningConfig(k=5), 0)
    manifest = _manifest_from(samples, "m1", 0)
    manifest.write_tsv(tmp_path / "a.tsv")
    manifest.write_tsv(tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_manifest_rejects_foreign_header(tmp_path) -> None:
    path = tmp_path / "junk.tsv"
    path.write_text("nope\n")
    with pytest.raises(DomainError):
        MiningManifest.read_tsv(path)


# -- accuracy diagnostic -----------------------------------------------------


def test_iou_hand_values() -> None:
    assert _iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert _iou((0, 0, 2, 2), (2, 2, 4, 4)) == 0.0
    assert _iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1.0 / 3.0)


def test_mining_label_accuracy_counts_hits() -> None:
    def row(x0, y0, label=MiningLabel.PROBABLE_POSITIVE, image_id="m1"):
        return MiningRow(
            image_id=image_id, epoch=0, x0=x0, y0=y0, x1=x0 + 64, y1=y0 + 64,
            cell_i=0, cell_j=0, mining_label=label, cell_prob=0.9,
            subtype=Subtype.HIP if label is MiningLabel.PROBABLE_POSITIVE else None,
        )

    # gt (40,40,80,80): centred ROI hits, distant ROI misses; a hard
    # negative row never enters the denominator
    manifest = MiningManifest(
        rows=(row(30, 30), row(0, 0), row(64, 64, MiningLabel.HARD_NEGATIVE, "m2"))
    )
    labels = {"m1": _POS}
    assert mining_label_accuracy(manifest, labels) == 0.5

    with pytest.raises(DomainError):
        mining_label_accuracy(MiningManifest(rows=()), labels)
    with pytest.raises(DomainError):
        mining_label_accuracy(MiningManifest(rows=(row(30, 30),)), {})
