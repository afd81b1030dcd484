"""Gaussian primitives.

Validated symmetric PSD matrices (with the eigendecomposition cached so square
roots and inverses reuse one factorization), Gaussian and jointly-Gaussian
records, conditioning, and the closed-form cross-covariance of the entropy
regularized coupling between two Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidParams,
    NotPsd,
    SingularCovariance,
)

__all__ = [
    "PSD_TOL",
    "SINGULAR_TOL",
    "SymPsdMatrix",
    "Gaussian",
    "JointGaussian2d",
    "as_psd",
    "sqrt_psd",
    "coupling_cross_cov",
    "condition",
    "static_coupling",
]

PSD_TOL = 1e-10
SINGULAR_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SymPsdMatrix:
    """A symmetric positive semi-definite matrix.

    Construction symmetrizes the input (exact in floating point), runs one
    eigendecomposition, rejects matrices whose smallest eigenvalue is below
    ``-PSD_TOL`` relative to the largest, and clamps small negative eigenvalues
    to zero. When nothing needed clamping the stored entries are the
    symmetrized input bit-for-bit; otherwise they are reassembled from the
    clamped spectrum.
    """

    entries: np.ndarray
    eigenvalues: np.ndarray = field(init=False, repr=False, compare=False)
    eigenvectors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidParams("matrix entries must be finite")
        sym = 0.5 * (m + m.T)
        vals, vecs = np.linalg.eigh(sym)
        scale = max(float(vals[-1]), 0.0)
        floor = -PSD_TOL * max(scale, 1.0)
        if float(vals[0]) < floor:
            raise NotPsd(
                f"matrix is not PSD: min eigenvalue {vals[0]:.6e} below "
                f"tolerance {floor:.6e}"
            )
        if float(vals[0]) < 0.0:
            vals = np.maximum(vals, 0.0)
            sym = vecs @ (vals[:, None] * vecs.T)
            sym = 0.5 * (sym + sym.T)
        object.__setattr__(self, "entries", _readonly(sym))
        object.__setattr__(self, "eigenvalues", _readonly(vals))
        object.__setattr__(self, "eigenvectors", _readonly(vecs))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def _rebuild(self, eigvals: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        out = v @ (eigvals[:, None] * v.T)
        return 0.5 * (out + out.T)

    def sqrt(self) -> np.ndarray:
        """Symmetric PSD square root."""
        return self._rebuild(np.sqrt(self.eigenvalues))

    def _check_invertible(self, what: str) -> None:
        top = float(self.eigenvalues[-1])
        if float(self.eigenvalues[0]) <= SINGULAR_TOL * max(top, 1.0):
            raise SingularCovariance(
                f"{what} needs a non-singular matrix: min eigenvalue "
                f"{self.eigenvalues[0]:.6e} vs max {top:.6e}"
            )

    def inv(self) -> np.ndarray:
        self._check_invertible("inverse")
        return self._rebuild(1.0 / self.eigenvalues)

    def inv_sqrt(self) -> np.ndarray:
        self._check_invertible("inverse square root")
        return self._rebuild(1.0 / np.sqrt(self.eigenvalues))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``self @ x = rhs`` through the cached eigendecomposition."""
        self._check_invertible("solve")
        v = self.eigenvectors
        w = v.T @ rhs
        if w.ndim == 2:
            return v @ (w / self.eigenvalues[:, None])
        return v @ (w / self.eigenvalues)


def as_psd(mat) -> SymPsdMatrix:
    """Coerce an array (or pass through a SymPsdMatrix) with validation."""
    if isinstance(mat, SymPsdMatrix):
        return mat
    return SymPsdMatrix(np.asarray(mat, dtype=np.float64))


def sqrt_psd(mat) -> np.ndarray:
    """Symmetric PSD square root of a symmetric PSD matrix."""
    return as_psd(mat).sqrt()


@dataclass(frozen=True)
class Gaussian:
    """A Gaussian with mean vector and validated PSD covariance."""

    mean: np.ndarray
    cov: SymPsdMatrix

    def __post_init__(self):
        mean = _readonly(np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))
        cov = as_psd(self.cov)
        if mean.ndim != 1:
            raise DimensionMismatch(f"mean must be a vector, got shape {mean.shape}")
        if not np.all(np.isfinite(mean)):
            raise InvalidParams("mean entries must be finite")
        if cov.dim != mean.shape[0]:
            raise DimensionMismatch(
                f"mean has dim {mean.shape[0]} but covariance is {cov.dim}x{cov.dim}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class JointGaussian2d:
    """A Gaussian over a pair of equal-dimension blocks.

    Stores the two marginal blocks and the cross block Cov(X0, X1); the
    assembled 2d x 2d covariance must be PSD within tolerance, but the stored
    blocks themselves are kept bit-exact.
    """

    mean0: np.ndarray
    mean1: np.ndarray
    cov00: SymPsdMatrix
    cov01: np.ndarray
    cov11: SymPsdMatrix

    def __post_init__(self):
        mean0 = _readonly(np.atleast_1d(np.asarray(self.mean0, dtype=np.float64)))
        mean1 = _readonly(np.atleast_1d(np.asarray(self.mean1, dtype=np.float64)))
        cov00 = as_psd(self.cov00)
        cov11 = as_psd(self.cov11)
        cov01 = _readonly(np.asarray(self.cov01, dtype=np.float64))
        d = mean0.shape[0]
        if mean1.shape[0] != d or cov00.dim != d or cov11.dim != d or cov01.shape != (d, d):
            raise DimensionMismatch("joint Gaussian blocks disagree on dimension")
        object.__setattr__(self, "mean0", mean0)
        object.__setattr__(self, "mean1", mean1)
        object.__setattr__(self, "cov00", cov00)
        object.__setattr__(self, "cov01", cov01)
        object.__setattr__(self, "cov11", cov11)
        as_psd(self.assemble())  # raises NotPsd when the cross block is infeasible

    @property
    def dim(self) -> int:
        return self.mean0.shape[0]

    def assemble(self) -> np.ndarray:
        """The full 2d x 2d covariance [[cov00, cov01], [cov01.T, cov11]]."""
        return np.block(
            [[self.cov00.entries, self.cov01], [self.cov01.T, self.cov11.entries]]
        )

    def marginal(self, index: int) -> Gaussian:
        if index == 0:
            return Gaussian(self.mean0, self.cov00)
        if index == 1:
            return Gaussian(self.mean1, self.cov11)
        raise InvalidParams(f"marginal index must be 0 or 1, got {index}")


def coupling_cross_cov(cov_start, cov_end, sigma: float) -> np.ndarray:
    """Cross-covariance of the entropy-regularized Gaussian coupling.

    For marginal covariances S (start) and E (end) and noise scale sigma this
    is ``0.5 (S^{1/2} D S^{-1/2} - sigma^2 I)`` with
    ``D = (4 S^{1/2} E S^{1/2} + sigma^4 I)^{1/2}``. Not symmetric in general
    and deliberately not symmetrized. ``sigma = 0`` yields the deterministic
    (Monge) coupling; large sigma drives the blocks toward independence.
    """
    start = as_psd(cov_start)
    end = as_psd(cov_end)
    if start.dim != end.dim:
        raise DimensionMismatch(
            f"covariances disagree: {start.dim}x{start.dim} vs {end.dim}x{end.dim}"
        )
    if not np.isfinite(sigma) or sigma < 0.0:
        raise InvalidParams(f"sigma must be finite and >= 0, got {sigma}")
    root = start.sqrt()
    inv_root = start.inv_sqrt()
    d = start.dim
    inner = 4.0 * (root @ end.entries @ root) + (sigma**4) * np.eye(d)
    mid = as_psd(inner).sqrt()
    return 0.5 * (root @ mid @ inv_root - (sigma**2) * np.eye(d))


def condition(joint: JointGaussian2d, observed_index: int, y: np.ndarray) -> Gaussian:
    """Condition one block of a joint Gaussian on an observed value of the other."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (joint.dim,):
        raise DimensionMismatch(f"observation must have shape ({joint.dim},), got {y.shape}")
    if observed_index == 1:
        gain = joint.cov01 @ joint.cov11.inv()
        mean = joint.mean0 + gain @ (y - joint.mean1)
        cov = joint.cov00.entries - gain @ joint.cov01.T
    elif observed_index == 0:
        gain = joint.cov01.T @ joint.cov00.inv()
        mean = joint.mean1 + gain @ (y - joint.mean0)
        cov = joint.cov11.entries - gain @ joint.cov01
    else:
        raise InvalidParams(f"observed_index must be 0 or 1, got {observed_index}")
    return Gaussian(mean, as_psd(cov))


def static_coupling(start: Gaussian, end: Gaussian, sigma: float) -> JointGaussian2d:
    """Entropy-regularized coupling of two Gaussians at noise scale sigma.

    The marginal blocks of the result are the inputs' covariance objects
    themselves (bit-exact); only the cross block is computed.
    """
    if start.dim != end.dim:
        raise DimensionMismatch(f"marginals disagree: dim {start.dim} vs {end.dim}")
    cross = coupling_cross_cov(start.cov, end.cov, sigma)
    return JointGaussian2d(start.mean, end.mean, start.cov, cross, end.cov)
