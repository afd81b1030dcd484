"""Evaluation: entropy-regularized transport distance and moment estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, InvalidParams, TooFewPoints
from .gaussian import Gaussian, as_psd

__all__ = [
    "SinkhornConfig",
    "SinkhornResult",
    "pairwise_sq_dists",
    "sinkhorn_weps",
    "estimate_moments",
]


@dataclass(frozen=True)
class SinkhornConfig:
    """Settings for the entropic transport metric.

    ``epsilon=None`` picks 0.05 times the mean entry of the squared-distance
    cost matrix, a scale-aware default.
    """

    epsilon: float | None = None
    max_iters: int = 2000
    tol: float = 1e-8

    def __post_init__(self):
        if self.epsilon is not None and self.epsilon <= 0.0:
            raise InvalidParams(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iters < 1:
            raise InvalidParams(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol <= 0.0:
            raise InvalidParams(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class SinkhornResult:
    value: float
    epsilon: float
    iters: int
    converged: bool
    marginal_error: float

    def to_dict(self) -> dict:
        return {
            "metric": "entropic_w2sq",
            "value": self.value,
            "epsilon": self.epsilon,
            "iters": self.iters,
            "converged": self.converged,
            "marginal_error": self.marginal_error,
        }


def pairwise_sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (n, m), clipped at zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionMismatch(
            f"point clouds disagree: shapes {x.shape} and {y.shape}"
        )
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    return np.maximum(sq, 0.0)


def sinkhorn_weps(x: np.ndarray, y: np.ndarray, config: SinkhornConfig | None = None) -> SinkhornResult:
    """Entropic transport cost <P, C> between uniform clouds, C = squared distance.

    Uses log-domain iterations; the reported value excludes the entropy term
    (it is the transport cost under the regularized plan, no debiasing).
    """
    config = config or SinkhornConfig()
    cost = pairwise_sq_dists(x, y)
    if cost.shape[0] < 1 or cost.shape[1] < 1:
        raise TooFewPoints("both clouds need at least one point")
    eps = config.epsilon
    if eps is None:
        mean_cost = float(cost.mean())
        if mean_cost <= 0.0:
            # identical degenerate clouds: any positive scale works
            mean_cost = 1.0
        eps = 0.05 * mean_cost
    n, m = cost.shape
    loga = np.full(n, -np.log(n))
    logb = np.full(m, -np.log(m))
    u, v, iters, err, converged = kernels.sinkhorn_log(
        cost, loga, logb, eps, max_iters=config.max_iters, tol=config.tol
    )
    plan = np.exp(u[:, None] + v[None, :] - cost / eps)
    value = float(np.sum(plan * cost))
    return SinkhornResult(
        value=value, epsilon=float(eps), iters=iters, converged=converged,
        marginal_error=err,
    )


def estimate_moments(points: np.ndarray, shrinkage: float = 1e-3) -> Gaussian:
    """Gaussian from the empirical mean and covariance of a point cloud.

    The covariance (unbiased normalization) is shrunk toward its scaled
    identity: (1 - s) * cov + s * (tr cov / d) * I, which keeps downstream
    inversions stable for nearly degenerate clouds.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionMismatch(f"points must have shape (n, d), got {points.shape}")
    if points.shape[0] < 2:
        raise TooFewPoints(f"need at least 2 points, got {points.shape[0]}")
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidParams(f"shrinkage must lie in [0, 1], got {shrinkage}")
    if not np.all(np.isfinite(points)):
        raise InvalidParams("points must be finite")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = (centered.T @ centered) / (points.shape[0] - 1)
    d = points.shape[1]
    cov = (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / d) * np.eye(d)
    return Gaussian(mean, as_psd(cov))
