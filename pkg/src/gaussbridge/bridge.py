"""Closed-form bridge between two Gaussians under a linear-drift reference.

Solving is one static step: the entropy-regularized coupling of the two
boundary Gaussians at the reference process's effective noise scale. Every
time-t quantity (marginal, drift field, pinned-endpoint conditionals) is then
an explicit formula in the transfer scalars; nothing is iterative.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import sde as sde_mod
from .errors import (
    DimensionMismatch,
    DimensionTooLarge,
    InvalidParams,
    SingularCovariance,
    SingularMarginal,
    TimeOutOfRange,
)
from .gaussian import Gaussian, JointGaussian2d, SymPsdMatrix, as_psd, static_coupling

__all__ = [
    "MAX_DIM",
    "ASYMMETRY_TOL",
    "COV_ODE_TOL",
    "BOUNDARY_TOL",
    "GsbProblem",
    "GsbSolution",
    "solve",
    "marginal",
    "drift_matrix",
    "drift",
    "bridge_given_start",
    "bridge_given_end",
    "ValidationRow",
    "ValidationReport",
    "validate",
]

MAX_DIM = 64
ASYMMETRY_TOL = 1e-8
COV_ODE_TOL = 1e-4
BOUNDARY_TOL = 1e-10


@dataclass(frozen=True)
class GsbProblem:
    """Boundary marginals plus the reference dynamics connecting them."""

    sde: sde_mod.LinearSde
    start: Gaussian
    end: Gaussian

    def __post_init__(self):
        if self.start.dim != self.end.dim:
            raise DimensionMismatch(
                f"boundary marginals disagree: dim {self.start.dim} vs {self.end.dim}"
            )
        if self.start.dim > MAX_DIM:
            raise DimensionTooLarge(
                f"dimension {self.start.dim} exceeds the supported limit {MAX_DIM}"
            )

    @property
    def dim(self) -> int:
        return self.start.dim


class GsbSolution:
    """Solved bridge: the static coupling plus cached pieces for time queries."""

    def __init__(self, problem: GsbProblem, sigma: float, joint: JointGaussian2d):
        self.problem = problem
        self.sde = problem.sde
        self.start = problem.start
        self.end = problem.end
        self.dim = problem.dim
        self.sigma = sigma
        self.joint = joint
        self.cross = joint.cov01
        self.cross_sym = self.cross + self.cross.T
        self.start_inv = self.start.cov.inv()

    @cached_property
    def end_gain(self) -> np.ndarray:
        """Maps centered start points to the conditional end mean: Sigma0^-1 C."""
        return self.start_inv @ self.cross

    @cached_property
    def cond_end_cov(self) -> SymPsdMatrix:
        """Cov(end | start), the Schur complement on the end block."""
        return as_psd(self.end.cov.entries - self.cross.T @ self.end_gain)

    @cached_property
    def end_inv(self) -> np.ndarray:
        try:
            return self.end.cov.inv()
        except SingularCovariance as exc:
            raise SingularCovariance(
                f"conditioning on the end marginal needs an invertible end "
                f"covariance: {exc}"
            ) from exc

    @cached_property
    def start_gain(self) -> np.ndarray:
        """Maps centered end points to the conditional start mean: SigmaT^-1 C^T."""
        return self.end_inv @ self.cross.T

    @cached_property
    def cond_start_cov(self) -> SymPsdMatrix:
        """Cov(start | end), the Schur complement on the start block."""
        return as_psd(self.start.cov.entries - self.cross @ self.start_gain)

    def scalars(self, t: float) -> sde_mod.SdeScalars:
        return sde_mod.bridge_scalars(self.sde, t, self.dim)


def solve(problem: GsbProblem) -> GsbSolution:
    """Solve the bridge: one closed-form coupling, no iteration.

    Requires an invertible start covariance and a reference process that
    accumulates noise by the horizon; raises SingularCovariance or
    DegenerateHorizon otherwise.
    """
    sigma = sde_mod.effective_sigma(problem.sde)
    joint = static_coupling(problem.start, problem.end, sigma)
    return GsbSolution(problem, sigma, joint)


def marginal(sol: GsbSolution, t: float) -> Gaussian:
    """The bridge's Gaussian marginal at time t; exact at both boundaries."""
    sc = sol.scalars(t)
    w_end = sc.weight_end
    w_start = sc.weight_start
    # offset correction grouped so it cancels exactly at both boundaries
    mean = (
        w_start * sol.start.mean
        + w_end * sol.end.mean
        + (sc.offset - w_end * sc.offset_end)
    )
    cov = (
        (w_start * w_start) * sol.start.cov.entries
        + (w_end * w_end) * sol.end.cov.entries
        + (w_end * w_start) * sol.cross_sym
        + (sc.kernel_tt * (1.0 - sc.noise_fraction)) * np.eye(sol.dim)
    )
    return Gaussian(mean, as_psd(cov))


def _marginal_cov_entries(sol: GsbSolution, sc: sde_mod.SdeScalars) -> np.ndarray:
    w_end = sc.weight_end
    w_start = sc.weight_start
    return (
        (w_start * w_start) * sol.start.cov.entries
        + (w_end * w_end) * sol.end.cov.entries
        + (w_end * w_start) * sol.cross_sym
        + (sc.kernel_tt * (1.0 - sc.noise_fraction)) * np.eye(sol.dim)
    )


def _marginal_mean(sol: GsbSolution, sc: sde_mod.SdeScalars) -> np.ndarray:
    return (
        sc.weight_start * sol.start.mean
        + sc.weight_end * sol.end.mean
        + (sc.offset - sc.weight_end * sc.offset_end)
    )


def drift_matrix(sol: GsbSolution, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Affine drift (A_t, b_t) of the bridge process at an interior time.

    The drift field is A_t x + b_t; A_t is symmetric up to roundoff because
    the state-dependent part is a gradient. Raises TimeOutOfRange outside the
    open interval (0, horizon) and SingularMarginal if the interpolating
    covariance cannot be inverted.
    """
    t = float(t)
    if not 0.0 < t < sol.sde.horizon:
        raise TimeOutOfRange(
            f"drift is defined on the open interval (0, {sol.sde.horizon}), got t={t}"
        )
    sc = sol.scalars(t)
    pull = (
        sc.d_weight_end
        * (sc.weight_end * sol.end.cov.entries + sc.weight_start * sol.cross)
    )
    push = (
        sc.d_weight_start
        * (sc.weight_start * sol.start.cov.entries + sc.weight_end * sol.cross.T)
    )
    noise_term = (
        sc.drift_coef * sc.kernel_tt * (1.0 - sc.noise_fraction)
        - sc.vol * sc.vol * sc.noise_fraction
    )
    s_mat = pull + push + noise_term * np.eye(sol.dim)
    cov = as_psd(_marginal_cov_entries(sol, sc))
    try:
        cov_inv = cov.inv()
    except SingularCovariance as exc:
        raise SingularMarginal(f"marginal covariance at t={t} is singular: {exc}") from exc
    A = s_mat.T @ cov_inv
    d_mean = (
        sc.d_weight_start * sol.start.mean
        + sc.d_weight_end * sol.end.mean
        + (sc.d_offset - sc.d_weight_end * sc.offset_end)
    )
    b = d_mean - A @ _marginal_mean(sol, sc)
    return A, b


def drift(sol: GsbSolution, t: float, x: np.ndarray) -> np.ndarray:
    """Evaluate the bridge drift at points ``x`` (shape (d,) or (n, d))."""
    A, b = drift_matrix(sol, t)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return A @ x + b
    if x.ndim == 2 and x.shape[1] == sol.dim:
        return x @ A.T + b
    raise DimensionMismatch(f"points must have shape ({sol.dim},) or (n, {sol.dim})")


def bridge_given_start(sol: GsbSolution, t: float, x0: np.ndarray) -> Gaussian:
    """Law of the bridge at time t pinned to start point x0.

    Collapses to the point at t=0 and to the coupling's end-conditional at the
    horizon.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (sol.dim,):
        raise DimensionMismatch(f"x0 must have shape ({sol.dim},), got {x0.shape}")
    sc = sol.scalars(t)
    end_mean = sol.end.mean + (x0 - sol.start.mean) @ sol.end_gain
    mean = (
        sc.weight_start * x0
        + sc.weight_end * end_mean
        + (sc.offset - sc.weight_end * sc.offset_end)
    )
    cov = (sc.weight_end**2) * sol.cond_end_cov.entries + (
        sc.kernel_tt * (1.0 - sc.noise_fraction)
    ) * np.eye(sol.dim)
    return Gaussian(mean, as_psd(cov))


def bridge_given_end(sol: GsbSolution, t: float, x_end: np.ndarray) -> Gaussian:
    """Law of the bridge at time t pinned to end point x_end (mirror case)."""
    x_end = np.asarray(x_end, dtype=np.float64)
    if x_end.shape != (sol.dim,):
        raise DimensionMismatch(f"x_end must have shape ({sol.dim},), got {x_end.shape}")
    sc = sol.scalars(t)
    start_mean = sol.start.mean + (x_end - sol.end.mean) @ sol.start_gain
    mean = (
        sc.weight_start * start_mean
        + sc.weight_end * x_end
        + (sc.offset - sc.weight_end * sc.offset_end)
    )
    cov = (sc.weight_start**2) * sol.cond_start_cov.entries + (
        sc.kernel_tt * (1.0 - sc.noise_fraction)
    ) * np.eye(sol.dim)
    return Gaussian(mean, as_psd(cov))


# ---------------------------------------------------------------------------
# Self-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationRow:
    t: float
    drift_asymmetry: float
    cov_ode_residual: float


@dataclass(frozen=True)
class ValidationReport:
    boundary_mean_start: float
    boundary_cov_start: float
    boundary_mean_end: float
    boundary_cov_end: float
    rows: tuple
    asymmetry_tol: float
    cov_ode_tol: float
    boundary_tol: float

    @property
    def passed(self) -> bool:
        bounds_ok = (
            max(
                self.boundary_mean_start,
                self.boundary_cov_start,
                self.boundary_mean_end,
                self.boundary_cov_end,
            )
            <= self.boundary_tol
        )
        rows_ok = all(
            r.drift_asymmetry <= self.asymmetry_tol
            and r.cov_ode_residual <= self.cov_ode_tol
            for r in self.rows
        )
        return bounds_ok and rows_ok

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "boundary": {
                "mean_start": self.boundary_mean_start,
                "cov_start": self.boundary_cov_start,
                "mean_end": self.boundary_mean_end,
                "cov_end": self.boundary_cov_end,
                "tol": self.boundary_tol,
            },
            "rows": [
                {
                    "t": r.t,
                    "drift_asymmetry": r.drift_asymmetry,
                    "cov_ode_residual": r.cov_ode_residual,
                }
                for r in self.rows
            ],
            "tolerances": {
                "drift_asymmetry": self.asymmetry_tol,
                "cov_ode_residual": self.cov_ode_tol,
            },
        }

    def format_text(self) -> str:
        lines = [
            f"boundary errors: mean/cov at start {self.boundary_mean_start:.3e}/"
            f"{self.boundary_cov_start:.3e}, at end {self.boundary_mean_end:.3e}/"
            f"{self.boundary_cov_end:.3e} (tol {self.boundary_tol:.1e})",
            f"{'t':>10}  {'drift asymmetry':>15}  {'cov-ODE resid':>14}",
        ]
        for r in self.rows:
            lines.append(f"{r.t:10.6f}  {r.drift_asymmetry:15.3e}  {r.cov_ode_residual:14.3e}")
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def validate(
    sol: GsbSolution,
    n_grid: int = 20,
    asymmetry_tol: float = ASYMMETRY_TOL,
    cov_ode_tol: float = COV_ODE_TOL,
    boundary_tol: float = BOUNDARY_TOL,
) -> ValidationReport:
    """Check boundary exactness, drift symmetry, and the covariance transport ODE.

    The covariance check compares a central finite difference of the marginal
    covariance (step 1e-6 of the horizon) against A Sigma + Sigma A^T + g^2 I,
    relative to the finite-difference magnitude.
    """
    if n_grid < 1:
        raise InvalidParams(f"n_grid must be >= 1, got {n_grid}")
    horizon = sol.sde.horizon
    m0 = marginal(sol, 0.0)
    m1 = marginal(sol, horizon)
    b_mean0 = float(np.max(np.abs(m0.mean - sol.start.mean)))
    b_cov0 = float(np.max(np.abs(m0.cov.entries - sol.start.cov.entries)))
    b_mean1 = float(np.max(np.abs(m1.mean - sol.end.mean)))
    b_cov1 = float(np.max(np.abs(m1.cov.entries - sol.end.cov.entries)))

    h = 1e-6 * horizon
    margin = max(1e-3 * horizon, 10.0 * h)
    ts = np.linspace(margin, horizon - margin, n_grid)
    rows = []
    for t in ts:
        A, _ = drift_matrix(sol, float(t))
        asym = float(np.max(np.abs(A - A.T)) / (1.0 + np.max(np.abs(A))))
        sc = sol.scalars(float(t))
        cov = _marginal_cov_entries(sol, sc)
        cov_plus = _marginal_cov_entries(sol, sol.scalars(float(t) + h))
        cov_minus = _marginal_cov_entries(sol, sol.scalars(float(t) - h))
        d_cov = (cov_plus - cov_minus) / (2.0 * h)
        rhs = A @ cov + cov @ A.T + (sc.vol * sc.vol) * np.eye(sol.dim)
        resid = float(
            np.linalg.norm(d_cov - rhs) / (1.0 + np.linalg.norm(d_cov))
        )
        rows.append(ValidationRow(t=float(t), drift_asymmetry=asym, cov_ode_residual=resid))
    return ValidationReport(
        boundary_mean_start=b_mean0,
        boundary_cov_start=b_cov0,
        boundary_mean_end=b_mean1,
        boundary_cov_end=b_cov1,
        rows=tuple(rows),
        asymmetry_tol=asymmetry_tol,
        cov_ode_tol=cov_ode_tol,
        boundary_tol=boundary_tol,
    )
