"""Spatial pooling for multiple-instance training.

Log-sum-exp pooling turns a map of per-cell probabilities into a single
image score that is differentiable everywhere, unlike a hard max, while
still being dominated by the strongest cells:

    lse_r(S) = (1/r) * log( (1/|S|) * sum_ij exp(r * p_ij) )

For any finite r it sits between the mean and the max of the map, and it
approaches the max as r grows (the gap is bounded by log(|S|) / r). The
gradient weight of each cell is softmax(r * p)_ij, so every cell gets a
strictly positive share.

``max_pool`` and ``gap_pool`` cover the hard-max score used at inference
time and the global-average baseline.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core_types import DomainError, ProbabilityMap


class PoolKind(enum.Enum):
    LSE = "lse"
    MAX = "max"
    GAP = "gap"


@dataclass(frozen=True)
class PoolingConfig:
    """How stage 1 collapses a spatial map into one score.

    ``on_features`` switches the baseline behaviour of pooling the last
    feature map per channel before the classification head, instead of
    pooling the per-cell probabilities.
    """

    kind: PoolKind = PoolKind.LSE
    r: float = 10.0
    on_features: bool = False

    def __post_init__(self) -> None:
        if not np.isfinite(self.r) or self.r <= 0.0:
            raise DomainError(f"pooling r must be finite and > 0, got {self.r}")


def _as_values(pmap: ProbabilityMap | np.ndarray) -> np.ndarray:
    vals = pmap.values if isinstance(pmap, ProbabilityMap) else np.asarray(pmap, dtype=np.float64)
    if vals.size == 0:
        raise DomainError("cannot pool an empty map")
    if not np.isfinite(vals).all():
        raise DomainError("cannot pool non-finite values")
    return vals.astype(np.float64)


def lse_pool(pmap: ProbabilityMap | np.ndarray, r: float) -> tuple[float, np.ndarray]:
    """Pooled score and per-cell gradient weights.

    Computed with the max subtracted inside the exponent, so large r never
    overflows. The returned weights are softmax(r * p): non-negative,
    summing to one, shaped like the input map.
    """
    if not np.isfinite(r) or r <= 0.0:
        raise DomainError(f"r must be finite and > 0, got {r}")
    vals = _as_values(pmap)
    m = float(vals.max())
    shifted = np.exp(r * (vals - m))
    pooled = m + np.log(shifted.mean()) / r
    weights = shifted / shifted.sum()
    return float(pooled), weights


def max_pool(pmap: ProbabilityMap | np.ndarray) -> tuple[float, tuple[int, int]]:
    """Maximum cell value and its location.

    Ties break to the lexicographically smallest (i, j); np.argmax already
    scans in row-major order, which is exactly that.
    """
    vals = _as_values(pmap)
    flat_idx = int(np.argmax(vals))
    i, j = np.unravel_index(flat_idx, vals.shape)
    return float(vals[i, j]), (int(i), int(j))


def gap_pool(pmap: ProbabilityMap | np.ndarray) -> float:
    """Plain global average."""
    return float(_as_values(pmap).mean())


def pool_value(pmap: ProbabilityMap | np.ndarray, cfg: PoolingConfig) -> float:
    """Score a map according to the configured pooling kind."""
    if cfg.kind is PoolKind.LSE:
        return lse_pool(pmap, cfg.r)[0]
    if cfg.kind is PoolKind.MAX:
        return max_pool(pmap)[0]
    return gap_pool(pmap)
