"""Random z-rotation, Gaussian jitter, normalization and fixed-size resampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud


@dataclass(frozen=True)
class AugmentConfig:
    rotation_enabled: bool = True
    noise_sigma: float = 0.01
    noise_mean: float = 0.0
    target_points: int = 1024
    normalize: bool = True

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.target_points < 1:
            raise ValueError("target_points must be at least 1")

    @classmethod
    def plain(cls, target_points: int = 1024) -> "AugmentConfig":
        """Normalize and resample only."""
        return cls(rotation_enabled=False, noise_sigma=0.0, target_points=target_points)


def rotation_matrix_z(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def rotate_z(cloud: PointCloud, phi: float) -> PointCloud:
    """Rotate about the z axis: x' = cos*x + sin*y, y' = -sin*x + cos*y."""
    if not np.isfinite(phi):
        raise ValueError("rotation angle must be finite")
    p = cloud.points
    c, s = np.cos(phi), np.sin(phi)
    out = np.empty_like(p)
    out[:, 0] = c * p[:, 0] + s * p[:, 1]
    out[:, 1] = -s * p[:, 0] + c * p[:, 1]
    out[:, 2] = p[:, 2]
    return cloud.with_points(out)


def add_noise(cloud: PointCloud, sigma: float, mu: float, rng) -> PointCloud:
    """Add i.i.d. N(mu, sigma^2) to every coordinate (drawn row-major, x,y,z)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0 and mu == 0:
        return cloud
    if sigma == 0:
        return cloud.with_points(cloud.points + mu)
    return cloud.with_points(cloud.points + rng.normal(mu, sigma, size=cloud.points.shape))


def resample(cloud: PointCloud, n: int, rng) -> PointCloud:
    """Exactly ``n`` points: distinct indices when possible, otherwise with replacement."""
    if cloud.count == 0:
        raise ValueError("cannot resample an empty point cloud")
    if cloud.count >= n:
        idx = rng.choice(cloud.count, size=n, replace=False)
    else:
        idx = rng.integers(0, cloud.count, size=n)
    return cloud.with_points(cloud.points[idx])


def normalize(cloud: PointCloud) -> PointCloud:
    """Centre on the centroid and scale into the unit ball."""
    if cloud.count == 0:
        raise ValueError("cannot normalize an empty point cloud")
    p = cloud.points - cloud.points.mean(axis=0)
    r = np.sqrt((p * p).sum(axis=1)).max()
    if r >= 1e-12:
        p = p / r
    return cloud.with_points(p)


def augment_pipeline(cloud: PointCloud, cfg: AugmentConfig, rng) -> PointCloud:
    """normalize -> resample -> rotate_z -> add_noise, all drawing from ``rng``."""
    if cloud.count == 0:
        raise ValueError("cannot augment an empty point cloud")
    if cfg.normalize:
        cloud = normalize(cloud)
    cloud = resample(cloud, cfg.target_points, rng)
    if cfg.rotation_enabled:
        cloud = rotate_z(cloud, rng.uniform(0.0, 2 * np.pi))
    return add_noise(cloud, cfg.noise_sigma, cfg.noise_mean, rng)
