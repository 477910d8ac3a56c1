"""LSE pooling math against an independent high-precision oracle.

The frozen constants below were computed with mpmath at 60 decimal
digits: lse(v, r) = log(mean(exp(r*v))) / r and softmax weights
exp(r*v) / sum(exp(r*v)) for v = [0.2, 0.8].
"""

from __future__ import annotations

import numpy as np
import pytest
import torch

from fracmil import DomainError, MapGeometry, PoolKind, PoolingConfig, ProbabilityMap
from fracmil import gap_pool, lse_pool, max_pool
from fracmil.core_types import keyed_rng
from fracmil.nets import pool_features, pool_map
from fracmil.pooling import pool_value

# mpmath, 60 digits, rounded to float64
LSE_02_08_R10 = 0.730932850457778514
LSE_02_08_R1000 = 0.799306852819440054
W_02_R10 = 0.002472623156634774
W_08_R10 = 0.997527376843365226


def test_lse_matches_high_precision_oracle() -> None:
    vals = np.array([[0.2, 0.8]])
    pooled, weights = lse_pool(vals, r=10.0)
    assert pooled == pytest.approx(LSE_02_08_R10, abs=1e-15)
    assert weights[0, 0] == pytest.approx(W_02_R10, abs=1e-15)
    assert weights[0, 1] == pytest.approx(W_08_R10, abs=1e-15)


def test_lse_large_r_is_stable_and_near_max() -> None:
    pooled, _ = lse_pool(np.array([0.2, 0.8]), r=1000.0)
    assert np.isfinite(pooled)
    assert pooled == pytest.approx(LSE_02_08_R1000, abs=1e-15)
    # closed form: max - log(2)/1000 since the smaller term vanishes
    assert pooled == pytest.approx(0.8 - np.log(2.0) / 1000.0, abs=1e-12)


def test_lse_between_mean_and_max_random_maps() -> None:
    rng = keyed_rng("pool", "bounds")
    for _ in range(300):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
        vals = rng.random(shape)
        r = float(rng.uniform(0.5, 50.0))
        pooled, weights = lse_pool(vals, r)
        assert vals.mean() - 1e-12 <= pooled <= vals.max() + 1e-12
        assert abs(pooled - vals.max()) <= np.log(vals.size) / r + 1e-12
        assert weights.shape == vals.shape
        assert np.all(weights >= 0.0)
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_lse_monotone_in_r() -> None:
    rng = keyed_rng("pool", "monotone")
    for _ in range(100):
        vals = rng.random((4, 4))
        rs = np.sort(rng.uniform(0.5, 80.0, size=5))
        pooled = [lse_pool(vals, float(r))[0] for r in rs]
        assert all(a <= b + 1e-12 for a, b in zip(pooled, pooled[1:]))


def test_constant_map_pools_to_constant() -> None:
    vals = np.full((6, 6), 0.37)
    pooled, weights = lse_pool(vals, r=10.0)
    assert pooled == pytest.approx(0.37, abs=1e-12)
    np.testing.assert_allclose(weights, 1.0 / 36.0, atol=1e-15)
    assert gap_pool(vals) == pytest.approx(0.37)
    assert max_pool(vals)[0] == pytest.approx(0.37)


def test_max_pool_breaks_ties_lexicographically() -> None:
    vals = np.array([[0.1, 0.9], [0.9, 0.2]])
    value, cell = max_pool(vals)
    assert value == 0.9
    assert cell == (0, 1)


def test_pool_rejects_bad_inputs() -> None:
    with pytest.raises(DomainError):
        lse_pool(np.array([]), r=10.0)
    with pytest.raises(DomainError):
        lse_pool(np.array([0.5]), r=0.0)
    with pytest.raises(DomainError):
        lse_pool(np.array([np.inf]), r=10.0)
    with pytest.raises(DomainError):
        PoolingConfig(kind=PoolKind.LSE, r=-1.0)


def test_pool_value_dispatch_and_probability_map_input() -> None:
    geom = MapGeometry(stride=32, roi_size=64, image_height=64, image_width=64)
    pmap = ProbabilityMap(values=np.array([[0.2, 0.8], [0.3, 0.4]]), geometry=geom)
    assert pool_value(pmap, PoolingConfig(kind=PoolKind.MAX)) == 0.8
    assert pool_value(pmap, PoolingConfig(kind=PoolKind.GAP)) == pytest.approx(0.425)
    direct, _ = lse_pool(pmap, r=10.0)
    assert pool_value(pmap, PoolingConfig(kind=PoolKind.LSE, r=10.0)) == direct


def test_torch_pooling_agrees_with_numpy() -> None:
    rng = keyed_rng("pool", "torch")
    for _ in range(50):
        vals = rng.random((1, 1, 5, 7))
        t = torch.from_numpy(vals)
        for kind, r in ((PoolKind.LSE, 10.0), (PoolKind.LSE, 35.0), (PoolKind.GAP, 10.0), (PoolKind.MAX, 10.0)):
            cfg = PoolingConfig(kind=kind, r=r)
            got = float(pool_map(t, cfg)[0])
            want = pool_value(vals[0, 0], cfg)
            assert got == pytest.approx(want, abs=1e-9)


def test_torch_feature_pooling_is_per_channel() -> None:
    rng = keyed_rng("pool", "feat")
    feats = torch.from_numpy(rng.random((2, 3, 4, 4)))
    cfg = PoolingConfig(kind=PoolKind.LSE, r=10.0)
    pooled = pool_features(feats, cfg)
    assert pooled.shape == (2, 3, 1, 1)
    for b in range(2):
        for c in range(3):
            want, _ = lse_pool(feats[b, c].numpy(), r=10.0)
            assert float(pooled[b, c, 0, 0]) == pytest.approx(want, abs=1e-9)


def test_lse_gradient_weights_match_autograd() -> None:
    # d(pooled)/d(p_ij) computed by torch must equal the returned weights
    rng = keyed_rng("pool", "grad")
    vals = rng.random((1, 1, 4, 4))
    leaf = torch.from_numpy(vals).clone().requires_grad_(True)
    pooled = pool_map(leaf, PoolingConfig(kind=PoolKind.LSE, r=10.0))
    pooled.sum().backward()
    _, weights = lse_pool(vals[0, 0], r=10.0)
    np.testing.assert_allclose(leaf.grad[0, 0].numpy(), weights, atol=1e-10)
    assert np.all(leaf.grad[0, 0].numpy() > 0.0)
