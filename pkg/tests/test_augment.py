from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ps2r.augment import (AugmentConfig, add_noise, augment_pipeline, normalize, resample,
                          rotate_z)
from ps2r.geometry import PointCloud
from ps2r.rng import CountingGenerator

coords = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)),
                elements=st.floats(-100, 100, allow_nan=False))
angles = st.floats(-10, 10, allow_nan=False)


def cloud(points, **kw):
    return PointCloud(np.asarray(points, float), **kw)


def test_rotate_identity_and_quarter_turn():
    c = cloud([[1, 0, 0], [0.3, -0.4, 0.5]])
    assert np.array_equal(rotate_z(c, 0.0).points, c.points)
    np.testing.assert_allclose(rotate_z(c, np.pi / 2).points[0], [0, -1, 0], atol=1e-15)


def test_rotate_preserves_planar_norm():
    for phi in np.linspace(0, 7, 13):
        p = rotate_z(cloud([[0.3, -0.4, 0.5]]), phi).points[0]
        assert np.hypot(p[0], p[1]) == pytest.approx(0.5, abs=1e-12)
        assert p[2] == 0.5


def test_rotate_rejects_non_finite():
    with pytest.raises(ValueError):
        rotate_z(cloud([[1, 2, 3]]), np.nan)


@settings(max_examples=50, deadline=None)
@given(coords, angles, angles)
def test_rotate_properties(p, a, b):
    c = cloud(p, label=3, domain="target", object_id=5, view_id=2)
    r = rotate_z(c, a)
    assert np.array_equal(r.points[:, 2], p[:, 2])
    assert (r.label, r.domain, r.object_id, r.view_id) == (3, "target", 5, 2)
    d0 = np.linalg.norm(p[:, None] - p[None], axis=-1)
    d1 = np.linalg.norm(r.points[:, None] - r.points[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=0, atol=1e-12 * max(1.0, d0.max()))
    np.testing.assert_allclose(rotate_z(r, b).points, rotate_z(c, a + b).points,
                               rtol=0, atol=1e-12 * max(1.0, np.abs(p).max()))


def test_noise_zero_sigma_is_bitwise_identity_without_draws():
    c = cloud(np.random.default_rng(0).normal(size=(50, 3)))
    counts = Counter()
    rng = CountingGenerator(np.random.default_rng(1), counts)
    out = add_noise(c, 0.0, 0.0, rng)
    assert out.points.tobytes() == c.points.tobytes()
    assert not counts
    with pytest.raises(ValueError):
        add_noise(c, -0.1, 0.0, rng)


def test_noise_draw_order_is_row_major():
    c = cloud(np.zeros((4, 3)))
    out = add_noise(c, 0.5, 0.2, np.random.default_rng(9))
    expected = np.random.default_rng(9).normal(0.2, 0.5, size=12).reshape(4, 3)
    assert np.array_equal(out.points, expected)


def test_noise_statistics():
    sigma = 0.01
    n = 1_000_000
    noise = add_noise(cloud(np.zeros((n, 3))), sigma, 0.0, np.random.default_rng(2024)).points
    flat = noise.ravel()[:n]  # 10^6 coordinates
    assert abs(flat.mean()) < 4 * sigma / np.sqrt(n)
    assert abs(flat.std() - sigma) < 0.01 * sigma
    cov = np.mean((noise[:, 0] - noise[:, 0].mean()) * (noise[:, 1] - noise[:, 1].mean()))
    assert abs(cov) < 4 / np.sqrt(n) * sigma ** 2


def test_resample_without_and_with_replacement():
    rng = np.random.default_rng(3)
    src = cloud(np.arange(2048 * 3, dtype=float).reshape(2048, 3))
    out = resample(src, 1024, rng)
    assert out.count == 1024
    assert len(np.unique(out.points[:, 0])) == 1024
    small = cloud(rng.normal(size=(100, 3)))
    up = resample(small, 1024, rng)
    assert up.count == 1024
    members = {tuple(p) for p in small.points}
    assert all(tuple(p) in members for p in up.points)
    with pytest.raises(ValueError):
        resample(cloud(np.zeros((0, 3))), 4, rng)


def test_normalize_examples():
    c = normalize(cloud(np.random.default_rng(4).normal(3, 2, size=(200, 3))))
    np.testing.assert_allclose(c.points.mean(axis=0), 0, atol=1e-12)
    assert np.linalg.norm(c.points, axis=1).max() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(normalize(c).points, c.points, atol=1e-12)
    single = normalize(cloud([[4.0, -2.0, 7.0]]))
    assert np.array_equal(single.points, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        normalize(cloud(np.zeros((0, 3))))


@settings(max_examples=50, deadline=None)
@given(coords)
def test_normalize_idempotent(p):
    once = normalize(cloud(p)).points
    np.testing.assert_allclose(normalize(cloud(once)).points, once, rtol=0, atol=1e-12)


def test_pipeline_all_off_is_plain_subsample():
    src = cloud(np.random.default_rng(5).normal(size=(300, 3)))
    cfg = AugmentConfig(rotation_enabled=False, noise_sigma=0.0, normalize=False, target_points=64)
    out = augment_pipeline(src, cfg, np.random.default_rng(6))
    ref = resample(src, 64, np.random.default_rng(6))
    assert np.array_equal(out.points, ref.points)


def test_pipeline_consumption_order():
    src = cloud(np.random.default_rng(5).normal(size=(300, 3)))
    cfg = AugmentConfig(target_points=32)
    out = augment_pipeline(src, cfg, np.random.default_rng(8))
    rng = np.random.default_rng(8)
    expected = resample(normalize(src), 32, rng)
    expected = rotate_z(expected, rng.uniform(0, 2 * np.pi))
    expected = add_noise(expected, cfg.noise_sigma, 0.0, rng)
    assert np.array_equal(out.points, expected.points)


@settings(max_examples=30, deadline=None)
@given(coords, st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_pipeline_deterministic_and_sized(p, n, seed):
    c = cloud(p, label=1, domain="target", object_id=3)
    cfg = AugmentConfig(target_points=n)
    a = augment_pipeline(c, cfg, np.random.default_rng(seed))
    b = augment_pipeline(c, cfg, np.random.default_rng(seed))
    assert a.count == n
    assert a.points.tobytes() == b.points.tobytes()
    assert (a.label, a.domain, a.object_id) == (1, "target", 3)


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(noise_sigma=-1)
    with pytest.raises(ValueError):
        AugmentConfig(target_points=0)
