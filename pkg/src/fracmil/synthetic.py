"""Synthetic pelvic-radiograph-like images with planted lesions.

Each image gets the same anatomy template: one bright disk in each outer
third (the hip regions) and a bright elongated band across the central
third (the pelvic region), over a smoothed noise background. Both
classes additionally receive distractors drawn from one shared
distribution: bright rings, and smooth dark arcs that imitate a lesion's
local statistics without its jagged geometry. Those arcs are the
intended hard-negative bait.

A positive image differs only by one planted lesion: a dark jagged
polyline crossing a bright structure, confined to the zone of its
subtype. The ground-truth box is the lesion's padded bounding box and is
recorded for evaluation only.

Determinism: every image is drawn from its own RNG stream keyed on
(seed, index), and intensities are quantised to 8 bits, so a dataset is
bit-identical whether regenerated or reloaded from PNG.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core_types import (
    GenerationError,
    DomainError,
    GrayscaleImage,
    ImageLabel,
    Subtype,
    keyed_rng,
)

_MARGIN = 4  # lesions keep this many pixels clear of zone and image edges
_MAX_ATTEMPTS = 50
_MIN_LESION_PIXELS = 25


@dataclass(frozen=True)
class GenConfig:
    n_images: int
    image_size: int = 128
    positive_fraction: float = 0.63
    hip_fraction: float = 0.71
    distractor_count: tuple[int, int] = (3, 6)
    lesion_contrast: tuple[float, float] = (0.14, 0.26)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_images < 1:
            raise DomainError("n_images must be >= 1")
        if self.image_size < 64:
            raise DomainError(f"image_size must be >= 64, got {self.image_size}")
        for name in ("positive_fraction", "hip_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DomainError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.distractor_count
        if not (0 <= lo <= hi):
            raise DomainError(f"bad distractor_count range {self.distractor_count}")
        clo, chi = self.lesion_contrast
        if not (0.0 < clo <= chi < 1.0):
            raise DomainError(f"bad lesion_contrast range {self.lesion_contrast}")


@dataclass(frozen=True)
class GeneratedImage:
    """One image plus generation-time diagnostics."""

    image: GrayscaleImage
    label: ImageLabel
    lesion_pixels: int


def zone_bounds(image_size: int) -> tuple[int, int]:
    """x-boundaries splitting the image into hip | pelvic | hip thirds."""
    return image_size // 3, image_size - image_size // 3


def subtype_for_center(x: float, image_size: int) -> Subtype:
    b1, b2 = zone_bounds(image_size)
    return Subtype.PELVIC if b1 <= x < b2 else Subtype.HIP


# ---------------------------------------------------------------------------
# drawing primitives (soft-edged, distance-field based)


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size]
    return xs.astype(np.float64), ys.astype(np.float64)


def _add_disk(canvas: np.ndarray, cx: float, cy: float, radius: float, amp: float) -> None:
    xs, ys = _grid(canvas.shape[0])
    dist = np.hypot(xs - cx, ys - cy)
    canvas += amp * np.clip((radius - dist) / 1.5 + 0.5, 0.0, 1.0)


def _add_ellipse(
    canvas: np.ndarray,
    cx: float,
    cy: float,
    ax: float,
    ay: float,
    theta: float,
    amp: float,
) -> None:
    xs, ys = _grid(canvas.shape[0])
    dx, dy = xs - cx, ys - cy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    d = np.sqrt((u / ax) ** 2 + (v / ay) ** 2)
    edge = (1.0 - d) * min(ax, ay)  # approximate signed distance to the rim
    canvas += amp * np.clip(edge / 1.5 + 0.5, 0.0, 1.0)


def _add_ring(
    canvas: np.ndarray, cx: float, cy: float, radius: float, width: float, amp: float
) -> None:
    xs, ys = _grid(canvas.shape[0])
    dist = np.abs(np.hypot(xs - cx, ys - cy) - radius)
    canvas += amp * np.clip((width / 2.0 - dist) / 1.0 + 0.5, 0.0, 1.0)


def _stamp_mask(size: int, points: np.ndarray, thickness: int) -> np.ndarray:
    """Rasterise a point chain into a boolean mask of the given thickness."""
    mask = np.zeros((size, size), dtype=bool)
    px = np.clip(np.round(points[:, 0]).astype(int), 0, size - 1)
    py = np.clip(np.round(points[:, 1]).astype(int), 0, size - 1)
    mask[py, px] = True
    if thickness >= 2:
        grown = mask.copy()
        grown[1:, :] |= mask[:-1, :]
        grown[:, 1:] |= mask[:, :-1]
        grown[1:, 1:] |= mask[:-1, :-1]
        mask = grown
    return mask


def _sample_segments(points: list[np.ndarray]) -> np.ndarray:
    """Dense samples along a polyline, quarter-pixel steps."""
    out = []
    for a, b in zip(points, points[1:]):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) * 4)))
        ts = np.linspace(0.0, 1.0, n)
        out.append(a[None, :] + ts[:, None] * (b - a)[None, :])
    return np.concatenate(out, axis=0)


def _bezier_points(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray, n: int = 64) -> np.ndarray:
    ts = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - ts) ** 2 * p0 + 2 * (1 - ts) * ts * p1 + ts**2 * p2


# ---------------------------------------------------------------------------
# scene construction


def _draw_background(size: int, rng: np.random.Generator) -> np.ndarray:
    base = 0.28 + 0.04 * rng.random()
    canvas = np.full((size, size), base, dtype=np.float64)
    coarse = rng.normal(0.0, 1.0, (size // 8, size // 8))
    coarse = np.kron(coarse, np.ones((8, 8)))[:size, :size]
    canvas += 0.03 * gaussian_filter(coarse, sigma=4.0)
    canvas += rng.normal(0.0, 0.012, (size, size))
    return canvas


def _draw_anatomy(canvas: np.ndarray, rng: np.random.Generator) -> dict:
    """Add the two hip disks and the pelvic band; return their parameters."""
    s = canvas.shape[0]
    before = canvas.copy()
    disks = []
    for lo, hi in ((0.10, 0.18), (0.82, 0.90)):
        cx = s * rng.uniform(lo, hi)
        cy = s * rng.uniform(0.35, 0.65)
        r = s * rng.uniform(0.08, 0.10)
        amp = rng.uniform(0.25, 0.35)
        _add_disk(canvas, cx, cy, r, amp)
        disks.append((cx, cy, r))
    ecx = s * rng.uniform(0.47, 0.53)
    ecy = s * rng.uniform(0.40, 0.60)
    eax = s * rng.uniform(0.08, 0.09)
    eay = s * rng.uniform(0.12, 0.16)
    theta = rng.uniform(-0.25, 0.25)
    _add_ellipse(canvas, ecx, ecy, eax, eay, theta, rng.uniform(0.22, 0.32))
    # striped interior sets the pelvic structure apart from the smooth hip
    # disks, so a local crop shows which structure a lesion crosses even
    # when the crop window spans more than one zone
    xs, ys = _grid(s)
    dx, dy = xs - ecx, ys - ecy
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    d = np.sqrt((u / eax) ** 2 + (v / eay) ** 2)
    stripes = 0.09 * np.sin(2 * np.pi * v / rng.uniform(5.0, 7.0) + rng.uniform(0.0, 2 * np.pi))
    canvas += np.where(d < 0.9, stripes, 0.0)
    structure = (canvas - before) >= 0.10
    return {
        "disks": disks,
        "band": (ecx, ecy, eax, eay, theta),
        "structure_mask": structure,
    }


def _draw_distractors(canvas: np.ndarray, cfg: GenConfig, rng: np.random.Generator) -> None:
    """Shared-distribution clutter: bright rings and smooth dark arcs."""
    s = canvas.shape[0]
    lo, hi = cfg.distractor_count
    count = int(rng.integers(lo, hi + 1))
    for _ in range(count):
        kind = rng.random()
        cx = rng.uniform(0.1 * s, 0.9 * s)
        cy = rng.uniform(0.1 * s, 0.9 * s)
        if kind < 0.5:
            _add_ring(
                canvas,
                cx,
                cy,
                radius=rng.uniform(0.045 * s, 0.09 * s),
                width=rng.uniform(1.5, 3.0),
                amp=rng.uniform(0.14, 0.24),
            )
        else:
            # smooth dark arc: lesion-like darkness and orientation,
            # non-jagged shape
            span = rng.uniform(0.18 * s, 0.40 * s)
            ang = float(rng.choice([0.5 * np.pi, -0.5 * np.pi])) + rng.uniform(-0.5, 0.5)
            p0 = np.array([cx, cy])
            p2 = p0 + span * np.array([np.cos(ang), np.sin(ang)])
            mid = (p0 + p2) / 2.0
            normal = np.array([-np.sin(ang), np.cos(ang)])
            p1 = mid + rng.uniform(-0.35, 0.35) * span * normal
            pts = _bezier_points(p0, p1, p2)
            mask = _stamp_mask(s, pts, thickness=int(rng.integers(1, 3)))
            canvas[mask] -= rng.uniform(0.10, 0.19)


def _walk_box(subtype: Subtype, left_side: bool, size: int) -> tuple[float, float, float, float]:
    # (x_lo, x_hi, y_lo, y_hi) the walk may occupy; inset far enough that
    # rasterisation and thickness growth cannot leave the subtype zone
    b1, b2 = zone_bounds(size)
    inset = _MARGIN + 2.0
    if subtype is Subtype.PELVIC:
        return b1 + inset, b2 - 1 - inset, inset, size - 1 - inset
    if left_side:
        return inset, b1 - 1 - inset, inset, size - 1 - inset
    return b2 + inset, size - 1 - inset, inset, size - 1 - inset


def _lesion_walk(
    start: np.ndarray,
    rng: np.random.Generator,
    size: int,
    box: tuple[float, float, float, float],
) -> list[np.ndarray]:
    """Jagged random walk reflected off the walls of its allowed box."""
    x_lo, x_hi, y_lo, y_hi = box
    n_seg = int(rng.integers(8, 12))
    step_lo = max(2.0, 0.045 * size)
    step_hi = max(3.0, 0.068 * size)
    # mostly vertical: the subtype zones are vertical strips, so this is
    # the orientation with room to grow (distractor arcs share the bias)
    heading = float(rng.choice([0.5 * np.pi, -0.5 * np.pi])) + rng.uniform(-0.5, 0.5)
    p = np.array([np.clip(start[0], x_lo, x_hi), np.clip(start[1], y_lo, y_hi)])
    pts = [p]
    for _ in range(n_seg):
        heading += rng.uniform(-0.35, 0.35)
        step = rng.uniform(step_lo, step_hi)
        d = step * np.array([np.cos(heading), np.sin(heading)])
        nxt = pts[-1] + d
        if not (x_lo <= nxt[0] <= x_hi):
            d[0] = -d[0]
        if not (y_lo <= nxt[1] <= y_hi):
            d[1] = -d[1]
        nxt = pts[-1] + d
        nxt = np.array([np.clip(nxt[0], x_lo, x_hi), np.clip(nxt[1], y_lo, y_hi)])
        pts.append(nxt)
    return pts


def _zone_ok(mask: np.ndarray, subtype: Subtype, size: int) -> bool:
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return False
    b1, b2 = zone_bounds(size)
    m = _MARGIN
    if ys.min() < m or ys.max() >= size - m:
        return False
    if subtype is Subtype.PELVIC:
        return xs.min() >= b1 + m and xs.max() < b2 - m
    left = xs.max() < b1 - m
    right = xs.min() >= b2 + m
    return (left or right) and xs.min() >= m and xs.max() < size - m


def _plant_lesion(
    canvas: np.ndarray,
    anatomy: dict,
    subtype: Subtype,
    cfg: GenConfig,
    rng: np.random.Generator,
) -> tuple[tuple[int, int, int, int], int]:
    """Draw one lesion; return (gt_box, lesion pixel count).

    Retries until the lesion stays inside its subtype zone, mostly
    overlaps bright structure, and is large enough to matter.
    """
    s = canvas.shape[0]
    structure = anatomy["structure_mask"]
    for _ in range(_MAX_ATTEMPTS):
        if subtype is Subtype.HIP:
            cx, cy, r = anatomy["disks"][int(rng.integers(0, 2))]
            ang = rng.uniform(0.0, 2 * np.pi)
            rho = rng.uniform(0.2 * r, 0.85 * r)
            start = np.array([cx + rho * np.cos(ang), cy + rho * np.sin(ang)])
            walk_box = _walk_box(subtype, left_side=cx < s / 2, size=s)
        else:
            ecx, ecy, eax, eay, theta = anatomy["band"]
            u = rng.uniform(-0.8, 0.8) * eax
            v = rng.uniform(-0.8, 0.8) * eay
            start = np.array(
                [
                    ecx + u * np.cos(theta) - v * np.sin(theta),
                    ecy + u * np.sin(theta) + v * np.cos(theta),
                ]
            )
            walk_box = _walk_box(subtype, left_side=False, size=s)
        pts = _lesion_walk(start, rng, s, walk_box)
        thickness = int(rng.integers(1, 3))
        mask = _stamp_mask(s, _sample_segments(pts), thickness)
        count = int(mask.sum())
        if count < _MIN_LESION_PIXELS:
            continue
        if not _zone_ok(mask, subtype, s):
            continue
        # the walk is long, so even a clean crossing leaves most of its
        # pixels off the structure; demand a meaningful fraction on it
        if structure[mask].mean() < 0.18:
            continue
        contrast = rng.uniform(*cfg.lesion_contrast)
        canvas[mask] -= contrast
        ys, xs = np.nonzero(mask)
        box = (
            max(0, int(xs.min()) - _MARGIN),
            max(0, int(ys.min()) - _MARGIN),
            min(s, int(xs.max()) + 1 + _MARGIN),
            min(s, int(ys.max()) + 1 + _MARGIN),
        )
        return box, count
    raise GenerationError(
        f"could not place a {subtype.value} lesion in {_MAX_ATTEMPTS} attempts"
    )


def _assignments(cfg: GenConfig) -> list[Subtype | None]:
    n_pos = int(round(cfg.n_images * cfg.positive_fraction))
    n_hip = int(round(n_pos * cfg.hip_fraction))
    kinds: list[Subtype | None] = [Subtype.HIP] * n_hip
    kinds += [Subtype.PELVIC] * (n_pos - n_hip)
    kinds += [None] * (cfg.n_images - n_pos)
    return kinds


def generate_detailed(cfg: GenConfig) -> list[GeneratedImage]:
    out: list[GeneratedImage] = []
    for idx, subtype in enumerate(_assignments(cfg)):
        rng = keyed_rng(cfg.seed, "image", idx)
        canvas = _draw_background(cfg.image_size, rng)
        anatomy = _draw_anatomy(canvas, rng)
        _draw_distractors(canvas, cfg, rng)
        gt_boxes: tuple[tuple[int, int, int, int], ...] = ()
        count = 0
        if subtype is not None:
            box, count = _plant_lesion(canvas, anatomy, subtype, cfg, rng)
            gt_boxes = (box,)
        pixels = np.round(np.clip(canvas, 0.0, 1.0) * 255.0) / 255.0
        image = GrayscaleImage(pixels=pixels, id=f"syn{cfg.seed:04d}_{idx:05d}")
        label = ImageLabel(
            fractured=subtype is not None, subtype=subtype, gt_boxes=gt_boxes
        )
        out.append(GeneratedImage(image=image, label=label, lesion_pixels=count))
    return out


def generate(cfg: GenConfig) -> list[tuple[GrayscaleImage, ImageLabel]]:
    """Generate the dataset as (image, label) pairs."""
    return [(g.image, g.label) for g in generate_detailed(cfg)]
