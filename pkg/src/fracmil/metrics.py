"""Evaluation metrics for scored binary and three-class decisions.

All threshold metrics share one convention: a case is called positive
when ``score >= t``, and candidate thresholds are the observed scores
plus {0, 1}. Restricting the sweep to that grid makes every reported
operating point reproducible from the score file alone.

AUC is computed from the ROC sweep with trapezoidal integration, which
equals the Mann-Whitney pairwise statistic with ties counted 1/2. The
test suite checks that identity against a brute-force implementation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_types import DomainError

THREE_CLASSES = ("hip", "pelvic", "no_finding")


@dataclass(frozen=True)
class ScoredSet:
    """Paired scores and binary labels for one evaluation split."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels, dtype=bool).ravel()
        if scores.size == 0 or scores.size != labels.size:
            raise DomainError(
                f"need matching non-empty scores/labels, got {scores.size}/{labels.size}"
            )
        if not np.isfinite(scores).all():
            raise DomainError("scores contain non-finite values")
        if scores.min() < 0.0 or scores.max() > 1.0:
            raise DomainError("scores outside [0, 1]")
        scores = scores.copy()
        labels = labels.copy()
        scores.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def require_both_classes(self) -> None:
        if self.n_pos == 0 or self.n_neg == 0:
            raise DomainError(
                f"metric needs both classes, got {self.n_pos} pos / {self.n_neg} neg"
            )


@dataclass(frozen=True)
class OperatingPoint:
    """A threshold and the metric value achieved there.

    ``degenerate`` marks targets that no threshold could satisfy; the
    point then falls back to threshold 0.
    """

    threshold: float
    value: float
    degenerate: bool = False


def thresholds_for(scored: ScoredSet) -> np.ndarray:
    """Candidate thresholds: observed scores plus the two endpoints."""
    return np.unique(np.concatenate([scored.scores, [0.0, 1.0]]))


def _counts_at(scored: ScoredSet, t: float) -> tuple[int, int]:
    # (true positives, false positives) under score >= t
    pred = scored.scores >= t
    tp = int(np.sum(pred & scored.labels))
    fp = int(np.sum(pred & ~scored.labels))
    return tp, fp


def roc_points(scored: ScoredSet) -> list[tuple[float, float]]:
    """(fpr, tpr) pairs from threshold +inf down to 0.

    Starts at exactly (0, 0) and ends at exactly (1, 1); threshold 0
    predicts everything positive, so the final point needs no patching.
    """
    scored.require_both_classes()
    points = [(0.0, 0.0)]
    for t in thresholds_for(scored)[::-1]:
        tp, fp = _counts_at(scored, float(t))
        pt = (fp / scored.n_neg, tp / scored.n_pos)
        if pt != points[-1]:
            points.append(pt)
    return points


def auc(scored: ScoredSet) -> float:
    """Area under the ROC sweep, trapezoidal rule."""
    pts = roc_points(scored)
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return float(area)


def pr_points(scored: ScoredSet) -> list[tuple[float, float]]:
    """(recall, precision) pairs from the highest threshold down to 0.

    A threshold with no positive predictions contributes precision 1 by
    convention, anchoring the curve at recall 0.
    """
    scored.require_both_classes()
    points: list[tuple[float, float]] = []
    for t in thresholds_for(scored)[::-1]:
        tp, fp = _counts_at(scored, float(t))
        recall = tp / scored.n_pos
        precision = tp / (tp + fp) if tp + fp else 1.0
        pt = (recall, precision)
        if not points or pt != points[-1]:
            points.append(pt)
    return points


def _validate_target(target: float) -> None:
    if not (0.0 < target <= 1.0):
        raise DomainError(f"target must lie in (0, 1], got {target}")


def spec_at_recall(scored: ScoredSet, target: float) -> OperatingPoint:
    """Specificity at the largest threshold whose recall meets the target.

    Recall only grows as the threshold drops, so the largest feasible
    threshold concedes the least specificity. Threshold 0 yields recall 1,
    hence a target in (0, 1] is always attainable.
    """
    _validate_target(target)
    scored.require_both_classes()
    for t in thresholds_for(scored)[::-1]:
        tp, fp = _counts_at(scored, float(t))
        if tp / scored.n_pos >= target:
            return OperatingPoint(threshold=float(t), value=1.0 - fp / scored.n_neg)
    raise AssertionError("unreachable: threshold 0 always reaches recall 1")


def prec_at_recall(scored: ScoredSet, target: float) -> OperatingPoint:
    """Precision at the same threshold spec_at_recall selects."""
    point = spec_at_recall(scored, target)
    tp, fp = _counts_at(scored, point.threshold)
    return OperatingPoint(threshold=point.threshold, value=tp / (tp + fp))


def recall_at_spec(scored: ScoredSet, target: float) -> OperatingPoint:
    """Recall at the smallest threshold whose specificity meets the target.

    Specificity only grows with the threshold, so the smallest feasible
    threshold concedes the least recall. If even threshold 1 falls short
    (negatives scoring exactly 1), the point degrades to threshold 0 and
    is flagged degenerate.
    """
    _validate_target(target)
    scored.require_both_classes()
    for t in thresholds_for(scored):
        tp, fp = _counts_at(scored, float(t))
        if 1.0 - fp / scored.n_neg >= target:
            return OperatingPoint(threshold=float(t), value=tp / scored.n_pos)
    return OperatingPoint(threshold=0.0, value=1.0, degenerate=True)


def youden_threshold(scored: ScoredSet) -> float:
    """Threshold maximising sensitivity + specificity - 1.

    Ties resolve to the largest threshold, i.e. the fewest positive calls.
    """
    scored.require_both_classes()
    best_t, best_j = 1.0, -np.inf
    for t in thresholds_for(scored)[::-1]:
        tp, fp = _counts_at(scored, float(t))
        j = tp / scored.n_pos - fp / scored.n_neg
        if j > best_j:
            best_t, best_j = float(t), j
    return best_t


@dataclass(frozen=True)
class ThreeClassReport:
    accuracy: float
    hip_sensitivity: float
    hip_specificity: float
    pelvic_sensitivity: float
    pelvic_specificity: float
    n: int


def three_class_report(pairs: list[tuple[str, str]]) -> ThreeClassReport:
    """Exact-match accuracy plus one-vs-rest sensitivity/specificity.

    ``pairs`` holds (predicted, actual) drawn from hip / pelvic /
    no_finding. Both fracture classes must occur among the actuals.
    """
    if not pairs:
        raise DomainError("empty decision list")
    for pred, actual in pairs:
        if pred not in THREE_CLASSES or actual not in THREE_CLASSES:
            raise DomainError(f"unknown class in pair ({pred!r}, {actual!r})")
    actuals = [a for _, a in pairs]
    correct = sum(1 for p, a in pairs if p == a)

    def one_vs_rest(cls: str) -> tuple[float, float]:
        pos = sum(1 for a in actuals if a == cls)
        neg = len(actuals) - pos
        if pos == 0 or neg == 0:
            raise DomainError(f"class {cls!r} missing from actuals or from the rest")
        tp = sum(1 for p, a in pairs if a == cls and p == cls)
        tn = sum(1 for p, a in pairs if a != cls and p != cls)
        return tp / pos, tn / neg

    hip_sens, hip_spec = one_vs_rest("hip")
    pel_sens, pel_spec = one_vs_rest("pelvic")
    return ThreeClassReport(
        accuracy=correct / len(pairs),
        hip_sensitivity=hip_sens,
        hip_specificity=hip_spec,
        pelvic_sensitivity=pel_sens,
        pelvic_specificity=pel_spec,
        n=len(pairs),
    )


@dataclass(frozen=True)
class EvalReport:
    """Everything the harness records for one method on one split."""

    auc: float
    n_pos: int
    n_neg: int
    points: dict[str, OperatingPoint] = field(default_factory=dict)
    three_class: ThreeClassReport | None = None

    def to_dict(self) -> dict:
        out: dict = {
            "auc": self.auc,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "points": {
                name: {
                    "threshold": pt.threshold,
                    "value": pt.value,
                    "degenerate": pt.degenerate,
                }
                for name, pt in self.points.items()
            },
        }
        if self.three_class is not None:
            tc = self.three_class
            out["three_class"] = {
                "accuracy": tc.accuracy,
                "hip_sensitivity": tc.hip_sensitivity,
                "hip_specificity": tc.hip_specificity,
                "pelvic_sensitivity": tc.pelvic_sensitivity,
                "pelvic_specificity": tc.pelvic_specificity,
                "n": tc.n,
            }
        return out

    @staticmethod
    def from_dict(rec: dict) -> "EvalReport":
        tc = None
        if rec.get("three_class") is not None:
            tc = ThreeClassReport(**rec["three_class"])
        points = {
            name: OperatingPoint(**pt) for name, pt in rec.get("points", {}).items()
        }
        return EvalReport(
            auc=rec["auc"],
            n_pos=rec["n_pos"],
            n_neg=rec["n_neg"],
            points=points,
            three_class=tc,
        )


def evaluate_scores(
    scored: ScoredSet,
    recall_targets: tuple[float, ...] = (0.95,),
    spec_targets: tuple[float, ...] = (0.95,),
    three_class: ThreeClassReport | None = None,
) -> EvalReport:
    points: dict[str, OperatingPoint] = {}
    for tgt in recall_targets:
        points[f"spec_at_recall_{tgt:g}"] = spec_at_recall(scored, tgt)
        points[f"prec_at_recall_{tgt:g}"] = prec_at_recall(scored, tgt)
    for tgt in spec_targets:
        points[f"recall_at_spec_{tgt:g}"] = recall_at_spec(scored, tgt)
    return EvalReport(
        auc=auc(scored),
        n_pos=scored.n_pos,
        n_neg=scored.n_neg,
        points=points,
        three_class=three_class,
    )


def write_report(report: EvalReport, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_report(path: Path | str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        return EvalReport.from_dict(json.load(fh))


def write_curve(points: list[tuple[float, float]], path: Path | str) -> None:
    """Two-column text file, one point per line, stable formatting."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in points:
            fh.write(f"{x:.12g}\t{y:.12g}\n")
