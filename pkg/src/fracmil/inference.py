"""Chained two-stage inference.

Stage 1 scores the whole image with the maximum cell probability and
names that cell; stage 2 re-scores a crop around it. The final score is
the product p_s1 * p_s2, which can only lower a score, never raise it:
stage 2 acts purely as a false-positive filter. The three-class decision
thresholds the final score and then splits fractures by the subtype
probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .core_types import (
    ConfigurationError,
    DomainError,
    GrayscaleImage,
    RoiBox,
    cell_to_box,
    crop_roi,
)
from .pooling import max_pool
from .stage1 import Stage1Model, forward_map
from .stage2 import Stage2Model, classify_roi

NO_FINDING = "no_finding"


@dataclass(frozen=True)
class ChainedResult:
    """Scores and the examined ROI for one image."""

    image_id: str
    p_s1: float
    p_s2: float
    p_final: float
    roi: RoiBox
    p_subtype: float | None
    decision: str | None = None


def infer(stage1: Stage1Model, stage2: Stage2Model, image: GrayscaleImage) -> ChainedResult:
    """Score one image through both stages."""
    if stage1.roi_size != stage2.roi_size:
        raise ConfigurationError(
            f"stage-1 roi_size {stage1.roi_size} != stage-2 roi_size {stage2.roi_size}"
        )
    pmap = forward_map(stage1, image)
    p_s1, cell = max_pool(pmap)
    box = cell_to_box(cell, pmap.geometry)
    crop = crop_roi(image, box, pmap.geometry)
    p_s2, p_subtype = classify_roi(stage2, crop)
    return ChainedResult(
        image_id=image.id,
        p_s1=p_s1,
        p_s2=p_s2,
        p_final=p_s1 * p_s2,
        roi=box,
        p_subtype=p_subtype,
    )


def decide_three_class(result: ChainedResult, tau: float) -> str:
    """hip / pelvic / no_finding from the final score and subtype probability."""
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if result.p_final < tau:
        return NO_FINDING
    if result.p_subtype is None:
        raise ConfigurationError(
            "three-class decision needs a subtype head; this model has none"
        )
    return "hip" if result.p_subtype >= 0.5 else "pelvic"


def infer_batch(
    stage1: Stage1Model,
    stage2: Stage2Model,
    images: list[GrayscaleImage],
    tau: float | None = None,
) -> list[ChainedResult]:
    """Run chained inference over a list; attach decisions when tau is given."""
    out = []
    for image in images:
        res = infer(stage1, stage2, image)
        if tau is not None:
            res = ChainedResult(
                image_id=res.image_id,
                p_s1=res.p_s1,
                p_s2=res.p_s2,
                p_final=res.p_final,
                roi=res.roi,
                p_subtype=res.p_subtype,
                decision=decide_three_class(res, tau),
            )
        out.append(res)
    return out


def write_results(results: list[ChainedResult], path: Path | str) -> None:
    """JSONL, one result per image, stable key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            rec = {
                "image_id": r.image_id,
                "p_s1": r.p_s1,
                "p_s2": r.p_s2,
                "p_final": r.p_final,
                "roi": [r.roi.x0, r.roi.y0, r.roi.x1, r.roi.y1],
                "cell": list(r.roi.source_cell),
                "p_subtype": r.p_subtype,
                "decision": r.decision,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_results(path: Path | str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
