"""ROI mining: turning stage-1 probability maps into stage-2 training data.

The decision threshold p_hat is calibrated on training-set positive image
scores at a high target sensitivity (0.99 by default), so nearly every
fractured image keeps at least one candidate cell. Cells at or above
p_hat form the candidate set S'.

From a fractured image we sample up to K candidates as probable
positives. From a non-fractured image every candidate is a confident
stage-1 false positive, so up to K of them become hard negatives, padded
with random below-threshold cells to exactly K. A fractured image with
an empty candidate set contributes nothing and is logged as a miss.

Sampling is keyed on (seed, image id, epoch): re-mining each epoch gives
fresh draws, while reruns of the pipeline reproduce them exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_types import (
    DomainError,
    GrayscaleImage,
    ImageLabel,
    MiningLabel,
    ProbabilityMap,
    RoiSample,
    Subtype,
    cell_to_box,
    crop_roi,
    keyed_rng,
)


@dataclass(frozen=True)
class CalibrationResult:
    """Mining threshold and the sensitivity it actually achieves."""

    p_hat: float
    target_sensitivity: float
    achieved_sensitivity: float
    n_positive_images: int


@dataclass(frozen=True)
class MiningConfig:
    k: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")


def calibrate_threshold(
    positive_scores: list[float] | np.ndarray, target_sensitivity: float = 0.99
) -> CalibrationResult:
    """Largest threshold keeping at least the target fraction of positives.

    Candidate thresholds are the observed scores themselves plus 0, and
    the retention predicate is closed (score >= threshold), so the result
    is always attainable: threshold 0 retains everything.
    """
    scores = np.asarray(positive_scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise DomainError("calibration needs at least one positive image score")
    if not np.isfinite(scores).all() or scores.min() < 0.0 or scores.max() > 1.0:
        raise DomainError("positive scores must be finite and within [0, 1]")
    if not (0.0 < target_sensitivity <= 1.0):
        raise DomainError(f"target sensitivity must lie in (0, 1], got {target_sensitivity}")
    for t in np.unique(np.concatenate([scores, [0.0]]))[::-1]:
        kept = float(np.mean(scores >= t))
        if kept >= target_sensitivity:
            return CalibrationResult(
                p_hat=float(t),
                target_sensitivity=target_sensitivity,
                achieved_sensitivity=kept,
                n_positive_images=int(scores.size),
            )
    raise AssertionError("unreachable: threshold 0 keeps every score")


def candidate_set(pmap: ProbabilityMap, p_hat: float) -> list[tuple[int, int]]:
    """Cells at or above the threshold, in row-major order."""
    if not (0.0 <= p_hat <= 1.0):
        raise DomainError(f"p_hat must lie in [0, 1], got {p_hat}")
    return [(int(i), int(j)) for i, j in np.argwhere(pmap.values >= p_hat)]


def _sample_cells(
    cells: list[tuple[int, int]], count: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    if count >= len(cells):
        return list(cells)
    idx = rng.choice(len(cells), size=count, replace=False)
    return [cells[i] for i in sorted(int(v) for v in idx)]


def mine_rois(
    image: GrayscaleImage,
    label: ImageLabel,
    pmap: ProbabilityMap,
    p_hat: float,
    cfg: MiningConfig,
    epoch: int,
) -> list[RoiSample]:
    """Mine up to K ROI samples from one image for one epoch.

    Fractured: up to K candidates as probable positives (possibly none).
    Non-fractured: up to K candidates as hard negatives, padded to K with
    random below-threshold cells.
    """
    geom = pmap.geometry
    if image.height != geom.image_height or image.width != geom.image_width:
        raise DomainError(
            f"image {image.id!r} is {image.width}x{image.height}, map geometry says "
            f"{geom.image_width}x{geom.image_height}"
        )
    rng = keyed_rng(cfg.seed, "mine", image.id, epoch)
    candidates = candidate_set(pmap, p_hat)

    def sample_for(cell: tuple[int, int], kind: MiningLabel, subtype: Subtype | None) -> RoiSample:
        box = cell_to_box(cell, geom)
        return RoiSample(
            crop=crop_roi(image, box, geom),
            box=box,
            mining_label=kind,
            cell_prob=float(pmap.values[cell]),
            subtype=subtype,
        )

    if label.fractured:
        chosen = _sample_cells(candidates, cfg.k, rng)
        return [sample_for(c, MiningLabel.PROBABLE_POSITIVE, label.subtype) for c in chosen]

    hard = _sample_cells(candidates, cfg.k, rng)
    in_cand = set(candidates)
    complement = [
        (i, j)
        for i in range(geom.map_height)
        for j in range(geom.map_width)
        if (i, j) not in in_cand
    ]
    padding = _sample_cells(complement, cfg.k - len(hard), rng)
    out = [sample_for(c, MiningLabel.HARD_NEGATIVE, None) for c in hard]
    out += [sample_for(c, MiningLabel.RANDOM_NEGATIVE, None) for c in padding]
    return out


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class MiningRow:
    image_id: str
    epoch: int
    x0: int
    y0: int
    x1: int
    y1: int
    cell_i: int
    cell_j: int
    mining_label: MiningLabel
    cell_prob: float
    subtype: Subtype | None


_TSV_HEADER = (
    "image_id\tepoch\tx0\ty0\tx1\ty1\tcell_i\tcell_j\tmining_label\tcell_prob\tsubtype"
)


@dataclass(frozen=True)
class MiningManifest:
    """Every mined ROI across the whole stage-2 run, plus mining misses."""

    rows: tuple[MiningRow, ...]
    misses: tuple[tuple[str, int], ...] = ()

    @staticmethod
    def from_samples(
        image_id: str, epoch: int, samples: list[RoiSample]
    ) -> list[MiningRow]:
        return [
            MiningRow(
                image_id=image_id,
                epoch=epoch,
                x0=s.box.x0,
                y0=s.box.y0,
                x1=s.box.x1,
                y1=s.box.y1,
                cell_i=s.box.source_cell[0],
                cell_j=s.box.source_cell[1],
                mining_label=s.mining_label,
                cell_prob=s.cell_prob,
                subtype=s.subtype,
            )
            for s in samples
        ]

    def write_tsv(self, path: Path | str) -> None:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_TSV_HEADER + "\n")
            for r in self.rows:
                fh.write(
                    f"{r.image_id}\t{r.epoch}\t{r.x0}\t{r.y0}\t{r.x1}\t{r.y1}"
                    f"\t{r.cell_i}\t{r.cell_j}\t{r.mining_label.value}"
                    f"\t{r.cell_prob:.12g}\t{r.subtype.value if r.subtype else '-'}\n"
                )
        if self.misses:
            with open(path.with_suffix(".misses.tsv"), "w", encoding="utf-8") as fh:
                fh.write("image_id\tepoch\n")
                for image_id, epoch in self.misses:
                    fh.write(f"{image_id}\t{epoch}\n")

    @staticmethod
    def read_tsv(path: Path | str) -> "MiningManifest":
        path = Path(path)
        rows: list[MiningRow] = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != _TSV_HEADER:
                raise DomainError(f"unexpected manifest header in {path}")
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                rows.append(
                    MiningRow(
                        image_id=parts[0],
                        epoch=int(parts[1]),
                        x0=int(parts[2]),
                        y0=int(parts[3]),
                        x1=int(parts[4]),
                        y1=int(parts[5]),
                        cell_i=int(parts[6]),
                        cell_j=int(parts[7]),
                        mining_label=MiningLabel(parts[8]),
                        cell_prob=float(parts[9]),
                        subtype=Subtype(parts[10]) if parts[10] != "-" else None,
                    )
                )
        misses: list[tuple[str, int]] = []
        miss_path = path.with_suffix(".misses.tsv")
        if miss_path.is_file():
            with open(miss_path, "r", encoding="utf-8") as fh:
                fh.readline()
                for line in fh:
                    image_id, epoch = line.rstrip("\n").split("\t")
                    misses.append((image_id, int(epoch)))
        return MiningManifest(rows=tuple(rows), misses=tuple(misses))


def _iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0, ix1 - ix0) * max(0, iy1 - iy0)
    if inter == 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def mining_label_accuracy(
    manifest: MiningManifest,
    labels_by_id: dict[str, ImageLabel],
    iou_threshold: float = 0.25,
) -> float:
    """Fraction of probable positives that actually hit a ground-truth box.

    A hit is IoU >= the threshold or the ROI centre falling inside a box.
    This is an evaluation-only diagnostic; gt boxes never touch training.
    """
    pp = [r for r in manifest.rows if r.mining_label is MiningLabel.PROBABLE_POSITIVE]
    if not pp:
        raise DomainError("manifest has no probable positives to score")
    hits = 0
    for r in pp:
        label = labels_by_id.get(r.image_id)
        if label is None:
            raise DomainError(f"no label for mined image {r.image_id!r}")
        roi = (r.x0, r.y0, r.x1, r.y1)
        cx = (r.x0 + r.x1) / 2.0
        cy = (r.y0 + r.y1) / 2.0
        for gt in label.gt_boxes:
            if _iou(roi, gt) >= iou_threshold or (
                gt[0] <= cx < gt[2] and gt[1] <= cy < gt[3]
            ):
                hits += 1
                break
    return hits / len(pp)
