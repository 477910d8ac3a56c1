"""Shared data types for the two-stage fracture pipeline.

Everything downstream (pooling, mining, both classifiers, the experiment
harness) speaks in terms of these types. They are deliberately dumb:
frozen dataclasses plus validation, no behaviour beyond the geometry
helpers `cell_to_box` and `crop_roi`.

Coordinate conventions, fixed once here so nobody has to guess:

* pixel boxes are half-open ``[x0, x1) x [y0, y1)`` in image coordinates,
  x to the right, y down;
* probability maps are indexed ``(i, j)`` = (row, col) = (y, x);
* a map cell ``(i, j)`` corresponds to the pixel whose coordinates are
  ``(j * stride + stride // 2, i * stride + stride // 2)``.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class DomainError(ValueError):
    """A value violates one of the documented invariants."""


class ConfigurationError(ValueError):
    """Components were wired together inconsistently."""


class GenerationError(RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""


class Subtype(enum.Enum):
    HIP = "hip"
    PELVIC = "pelvic"


class MiningLabel(enum.Enum):
    PROBABLE_POSITIVE = "probable_positive"
    HARD_NEGATIVE = "hard_negative"
    RANDOM_NEGATIVE = "random_negative"


def keyed_rng(*parts: object) -> np.random.Generator:
    """Deterministic RNG stream keyed on an arbitrary tuple of values.

    Hashing the rendered key through sha256 decouples every stream from
    every other one: re-mining image A at epoch 3 draws the same numbers
    no matter what happened to image B at epoch 2.
    """
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    seed = np.random.SeedSequence(list(digest[:16]))
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class GrayscaleImage:
    """A single-channel image with intensities in [0, 1]."""

    pixels: np.ndarray
    id: str

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise DomainError(f"image {self.id!r}: pixels must be a non-empty 2-d array")
        if not np.isfinite(px).all():
            raise DomainError(f"image {self.id!r}: pixels contain non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise DomainError(f"image {self.id!r}: intensities outside [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ImageLabel:
    """Image-level supervision: a fracture flag, optionally a subtype.

    ``gt_boxes`` carries evaluation-only lesion boxes as half-open
    ``(x0, y0, x1, y1)`` tuples. Training code never reads them.
    """

    fractured: bool
    subtype: Subtype | None = None
    gt_boxes: tuple[tuple[int, int, int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.subtype is not None and not self.fractured:
            raise DomainError("subtype set on a non-fractured label")
        boxes = tuple(tuple(int(v) for v in b) for b in self.gt_boxes)
        for b in boxes:
            if len(b) != 4:
                raise DomainError(f"gt_box {b!r} is not (x0, y0, x1, y1)")
            x0, y0, x1, y1 = b
            if not (0 <= x0 < x1 and 0 <= y0 < y1):
                raise DomainError(f"gt_box {b!r} is empty or negative")
        object.__setattr__(self, "gt_boxes", boxes)

    def validate_bounds(self, height: int, width: int) -> None:
        for x0, y0, x1, y1 in self.gt_boxes:
            if x1 > width or y1 > height:
                raise DomainError(
                    f"gt_box ({x0}, {y0}, {x1}, {y1}) exceeds image {width}x{height}"
                )


@dataclass(frozen=True)
class MapGeometry:
    """Ties a probability map back to pixel space."""

    stride: int
    roi_size: int
    image_height: int
    image_width: int

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise DomainError(f"stride must be >= 1, got {self.stride}")
        if self.roi_size < self.stride:
            raise DomainError(
                f"roi_size {self.roi_size} smaller than stride {self.stride}"
            )
        if self.image_height < self.stride or self.image_width < self.stride:
            raise DomainError(
                f"image {self.image_width}x{self.image_height} smaller than one stride"
            )

    @property
    def map_height(self) -> int:
        return self.image_height // self.stride

    @property
    def map_width(self) -> int:
        return self.image_width // self.stride

    @property
    def map_shape(self) -> tuple[int, int]:
        return (self.map_height, self.map_width)


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-cell fracture probabilities produced by the stage-1 network."""

    values: np.ndarray
    geometry: MapGeometry

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.geometry.map_shape:
            raise DomainError(
                f"map shape {vals.shape} does not match geometry {self.geometry.map_shape}"
            )
        if not np.isfinite(vals).all():
            raise DomainError("probability map contains non-finite values")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise DomainError("probability map values outside [0, 1]")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class RoiBox:
    """A pixel-space ROI, remembering which map cell produced it."""

    x0: int
    y0: int
    x1: int
    y1: int
    source_cell: tuple[int, int]

    def __post_init__(self) -> None:
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise DomainError(
                f"degenerate roi box ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )
        i, j = self.source_cell
        if i < 0 or j < 0:
            raise DomainError(f"negative source cell {self.source_cell}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class RoiSample:
    """One mined training example for the stage-2 classifier."""

    crop: GrayscaleImage
    box: RoiBox
    mining_label: MiningLabel
    cell_prob: float
    subtype: Subtype | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.cell_prob <= 1.0):
            raise DomainError(f"cell_prob {self.cell_prob} outside [0, 1]")
        if self.crop.height != self.crop.width:
            raise DomainError("roi crop must be square")
        if self.subtype is not None and self.mining_label is not MiningLabel.PROBABLE_POSITIVE:
            raise DomainError("subtype only attaches to probable positives")


def _ideal_box(cell: tuple[int, int], geometry: MapGeometry) -> tuple[int, int, int, int]:
    # Unclamped roi_size x roi_size window centred on the cell's pixel.
    i, j = cell
    cx = j * geometry.stride + geometry.stride // 2
    cy = i * geometry.stride + geometry.stride // 2
    x0 = cx - geometry.roi_size // 2
    y0 = cy - geometry.roi_size // 2
    return x0, y0, x0 + geometry.roi_size, y0 + geometry.roi_size


def cell_to_box(cell: tuple[int, int], geometry: MapGeometry) -> RoiBox:
    """Map a cell index to its ROI box, clamped to the image bounds.

    The box is the roi_size square centred on the cell's receptive-field
    centre, intersected with the image. Centre-of-cell arithmetic keeps
    the mapping exact for every stride/size combination.
    """
    i, j = int(cell[0]), int(cell[1])
    if not (0 <= i < geometry.map_height and 0 <= j < geometry.map_width):
        raise DomainError(
            f"cell ({i}, {j}) outside map {geometry.map_shape}"
        )
    x0, y0, x1, y1 = _ideal_box((i, j), geometry)
    return RoiBox(
        x0=max(0, x0),
        y0=max(0, y0),
        x1=min(geometry.image_width, x1),
        y1=min(geometry.image_height, y1),
        source_cell=(i, j),
    )


def crop_roi(image: GrayscaleImage, box: RoiBox, geometry: MapGeometry) -> GrayscaleImage:
    """Extract the ROI as a roi_size x roi_size crop, zero-padded at borders.

    The crop is laid out on the cell's ideal (unclamped) window, so a box
    clamped at the top-left lands at a positive offset inside the padded
    canvas rather than at (0, 0). Raises DomainError if the box is not the
    clamp of its source cell's window or does not fit the image.
    """
    if image.height != geometry.image_height or image.width != geometry.image_width:
        raise DomainError(
            f"image {image.width}x{image.height} does not match geometry "
            f"{geometry.image_width}x{geometry.image_height}"
        )
    ix0, iy0, ix1, iy1 = _ideal_box(box.source_cell, geometry)
    expected = (
        max(0, ix0),
        max(0, iy0),
        min(geometry.image_width, ix1),
        min(geometry.image_height, iy1),
    )
    if (box.x0, box.y0, box.x1, box.y1) != expected:
        raise DomainError(
            f"box ({box.x0}, {box.y0}, {box.x1}, {box.y1}) is not cell "
            f"{box.source_cell}'s window under this geometry"
        )
    out = np.zeros((geometry.roi_size, geometry.roi_size), dtype=np.float64)
    ox = box.x0 - ix0
    oy = box.y0 - iy0
    out[oy : oy + box.height, ox : ox + box.width] = image.pixels[
        box.y0 : box.y1, box.x0 : box.x1
    ]
    return GrayscaleImage(
        pixels=out, id=f"{image.id}@{box.source_cell[0]},{box.source_cell[1]}"
    )


# ---------------------------------------------------------------------------
# dataset IO: 8-bit grayscale PNGs plus a JSONL manifest


def save_png(image: GrayscaleImage, path: Path | str) -> None:
    arr = np.round(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_png(path: Path | str, image_id: str) -> GrayscaleImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return GrayscaleImage(pixels=arr / 255.0, id=image_id)


def _label_to_record(image_id: str, label: ImageLabel) -> dict:
    return {
        "id": image_id,
        "fractured": label.fractured,
        "subtype": label.subtype.value if label.subtype else None,
        "gt_boxes": [list(b) for b in label.gt_boxes],
    }


def _label_from_record(rec: dict) -> tuple[str, ImageLabel]:
    subtype = Subtype(rec["subtype"]) if rec.get("subtype") else None
    boxes = tuple(tuple(b) for b in rec.get("gt_boxes") or ())
    return rec["id"], ImageLabel(
        fractured=bool(rec["fractured"]), subtype=subtype, gt_boxes=boxes
    )


def save_dataset(items: list[tuple[GrayscaleImage, ImageLabel]], root: Path | str) -> None:
    """Write images to root/images/<id>.png and labels to root/manifest.jsonl."""
    root = Path(root)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    seen: set[str] = set()
    with open(root / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for image, label in items:
            if image.id in seen:
                raise DomainError(f"duplicate image id {image.id!r}")
            seen.add(image.id)
            label.validate_bounds(image.height, image.width)
            save_png(image, img_dir / f"{image.id}.png")
            fh.write(json.dumps(_label_to_record(image.id, label), sort_keys=True) + "\n")


def load_dataset(root: Path | str) -> list[tuple[GrayscaleImage, ImageLabel]]:
    root = Path(root)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise ConfigurationError(f"no manifest.jsonl under {root}")
    items: list[tuple[GrayscaleImage, ImageLabel]] = []
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            image_id, label = _label_from_record(json.loads(line))
            image = load_png(root / "images" / f"{image_id}.png", image_id)
            label.validate_bounds(image.height, image.width)
            items.append((image, label))
    if not items:
        raise ConfigurationError(f"empty dataset under {root}")
    return items
