"""Synthetic 2-d point clouds for coupling experiments, plus CSV helpers.

All generators take an integer seed and are deterministic for a given
(seed, n) pair. They use numpy's Generator rather than the counter-based
kernel RNG because dataset creation is one-shot and order-independent.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import InvalidParams, TooFewPoints

__all__ = [
    "make_moons",
    "make_spiral",
    "make_gaussian_mixture",
    "shared_standardize",
    "write_points_csv",
    "read_points_csv",
    "DATASET_NAMES",
]

DATASET_NAMES = ("moons", "spiral", "gaussian_mixture")


def _check_n(n: int):
    if n < 1:
        raise InvalidParams(f"n must be >= 1, got {n}")


def make_moons(n: int, noise: float = 0.05, seed: int = 0) -> np.ndarray:
    """Two interleaving half-circle arcs with Gaussian jitter, shape (n, 2).

    Upper arc: (cos a, sin a), a in [0, pi). Lower arc: (1 - cos a, 0.5 - sin a).
    """
    _check_n(n)
    if noise < 0.0:
        raise InvalidParams(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    n_top = n // 2
    n_bot = n - n_top
    a_top = rng.uniform(0.0, np.pi, size=n_top)
    a_bot = rng.uniform(0.0, np.pi, size=n_bot)
    top = np.stack([np.cos(a_top), np.sin(a_top)], axis=1)
    bot = np.stack([1.0 - np.cos(a_bot), 0.5 - np.sin(a_bot)], axis=1)
    pts = np.concatenate([top, bot], axis=0)
    if noise > 0.0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    return pts[rng.permutation(n)]


def make_spiral(
    n: int, noise: float = 0.05, seed: int = 0, turns: float = 1.5,
) -> np.ndarray:
    """Single Archimedean spiral arm, radius growing linearly with angle.

    Angles are sqrt-distributed so points spread roughly evenly along the
    arc instead of bunching near the center.
    """
    _check_n(n)
    if noise < 0.0:
        raise InvalidParams(f"noise must be >= 0, got {noise}")
    if turns <= 0.0:
        raise InvalidParams(f"turns must be positive, got {turns}")
    rng = np.random.default_rng(seed)
    theta_max = 2.0 * np.pi * turns
    theta = theta_max * np.sqrt(rng.uniform(0.0, 1.0, size=n))
    radius = 0.25 + 1.75 * theta / theta_max
    pts = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    if noise > 0.0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    return pts


def make_gaussian_mixture(
    n: int,
    centers: np.ndarray | None = None,
    scale: float = 0.25,
    seed: int = 0,
) -> np.ndarray:
    """Isotropic Gaussian blobs with equal weights. Default: 4 centers on a ring."""
    _check_n(n)
    if scale <= 0.0:
        raise InvalidParams(f"scale must be positive, got {scale}")
    if centers is None:
        angles = np.pi / 4.0 + np.pi / 2.0 * np.arange(4)
        centers = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 1:
        raise InvalidParams("centers must have shape (k, d) with k >= 1")
    rng = np.random.default_rng(seed)
    which = rng.integers(0, centers.shape[0], size=n)
    return centers[which] + rng.normal(0.0, scale, size=(n, centers.shape[1]))


_MAKERS = {
    "moons": make_moons,
    "spiral": make_spiral,
    "gaussian_mixture": make_gaussian_mixture,
}


def make_dataset(name: str, n: int, noise: float = 0.05, seed: int = 0) -> np.ndarray:
    if name not in _MAKERS:
        raise InvalidParams(f"unknown dataset {name!r}; choose from {DATASET_NAMES}")
    if name == "gaussian_mixture":
        return make_gaussian_mixture(n, seed=seed)
    return _MAKERS[name](n, noise=noise, seed=seed)


def shared_standardize(a: np.ndarray, b: np.ndarray):
    """Center/scale two clouds with one affine map fit on their union.

    Returns (a_std, b_std, transform) where transform holds "center" (d,)
    and scalar "scale"; the same map must be applied to both ends of a
    coupling problem or the geometry between them is distorted.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    both = np.concatenate([a, b], axis=0)
    center = both.mean(axis=0)
    scale = float(np.sqrt(np.mean((both - center) ** 2)))
    if scale <= 0.0:
        scale = 1.0
    return (a - center) / scale, (b - center) / scale, {
        "center": center, "scale": scale,
    }


def write_points_csv(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InvalidParams(f"points must have shape (n, d), got {points.shape}")
    header = [f"x{i}" for i in range(points.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in points:
            writer.writerow([repr(float(v)) for v in row])


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TooFewPoints(f"{path}: empty file")
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidParams(
                    f"{path}: row {len(rows) + 2} has {len(row)} fields, header has {len(header)}"
                )
            rows.append([float(v) for v in row])
    if not rows:
        raise TooFewPoints(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)
