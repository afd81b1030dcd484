"""Reference dynamics: linear-drift diffusions and their transfer scalars.

A process dY = (alpha_t Y + m_t) dt + g_t dW is summarized, for bridging
purposes, by four scalar functionals of time: the homogeneous transition
factor, the accumulated (transition-normalized) noise energy, the two-time
covariance kernel built from them, and the accumulated shift response. Presets
carry closed forms for all of these; anything missing falls back to adaptive
quadrature, and the two routes are required to agree (see tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import quadrature
from .errors import DegenerateHorizon, InvalidParams, TimeOutOfRange

__all__ = [
    "ClosedForms",
    "LinearSde",
    "SdeScalars",
    "preset",
    "PRESET_NAMES",
    "strip_closed_forms",
    "transition",
    "noise_integral",
    "offset",
    "kernel",
    "shift_at",
    "effective_sigma",
    "bridge_scalars",
]

DEGENERATE_KERNEL_TOL = 1e-14


@dataclass(frozen=True)
class ClosedForms:
    """Optional closed-form transfer functionals; any None falls back to quadrature."""

    transition: Optional[Callable[[float], float]] = None
    noise_integral: Optional[Callable[[float], float]] = None
    offset: Optional[Callable[[float], "float | np.ndarray"]] = None


@dataclass(frozen=True)
class LinearSde:
    """A linear-drift diffusion dY = (alpha_t Y + m_t) dt + g_t dW on [0, horizon].

    ``drift_coef`` is alpha_t, ``vol`` is g_t, and ``shift`` (optional) is m_t,
    returning a scalar or a vector; scalars broadcast to the problem dimension.
    """

    drift_coef: Callable[[float], float]
    vol: Callable[[float], float]
    horizon: float = 1.0
    shift: Optional[Callable[[float], "float | np.ndarray"]] = None
    closed: Optional[ClosedForms] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0.0:
            raise InvalidParams(f"horizon must be positive and finite, got {self.horizon}")


def _check_time(sde: LinearSde, t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= sde.horizon:
        raise TimeOutOfRange(f"t={t} outside [0, {sde.horizon}]")
    return t


def strip_closed_forms(sde: LinearSde) -> LinearSde:
    """Copy of ``sde`` that routes every transfer functional through quadrature."""
    return replace(sde, closed=None)


def transition(sde: LinearSde, t: float) -> float:
    """Homogeneous transition factor: exp of the integrated drift coefficient."""
    t = _check_time(sde, t)
    if sde.closed is not None and sde.closed.transition is not None:
        return float(sde.closed.transition(t))
    return math.exp(quadrature.integrate(sde.drift_coef, 0.0, t))


def noise_integral(sde: LinearSde, t: float) -> float:
    """Accumulated squared volatility, normalized by the transition factor."""
    t = _check_time(sde, t)
    if sde.closed is not None and sde.closed.noise_integral is not None:
        return float(sde.closed.noise_integral(t))

    def integrand(s: float) -> float:
        return (sde.vol(s) / transition(sde, s)) ** 2

    return float(quadrature.integrate(integrand, 0.0, t))


def kernel(sde: LinearSde, t: float, s: float) -> float:
    """Two-time covariance kernel of the driftless-normalized noise."""
    t = _check_time(sde, t)
    s = _check_time(sde, s)
    lo = min(t, s)
    return transition(sde, t) * transition(sde, s) * noise_integral(sde, lo)


def shift_at(sde: LinearSde, t: float, dim: int) -> np.ndarray:
    """The shift m_t broadcast to shape (dim,); zeros when no shift is set."""
    if sde.shift is None:
        return np.zeros(dim)
    val = np.asarray(sde.shift(t), dtype=np.float64)
    if val.ndim > 1 or (val.ndim == 1 and val.shape[0] != dim):
        raise InvalidParams(
            f"shift must return a scalar or a ({dim},) vector, got shape {val.shape}"
        )
    return np.broadcast_to(np.atleast_1d(val), (dim,)).astype(np.float64)


def offset(sde: LinearSde, t: float, dim: int) -> np.ndarray:
    """Accumulated shift response, shape (dim,); zero for shift-free processes."""
    t = _check_time(sde, t)
    if sde.shift is None:
        return np.zeros(dim)
    if sde.closed is not None and sde.closed.offset is not None:
        val = np.asarray(sde.closed.offset(t), dtype=np.float64)
        return np.broadcast_to(np.atleast_1d(val), (dim,)).astype(np.float64)

    def integrand(s: float) -> np.ndarray:
        return shift_at(sde, s, dim) / transition(sde, s)

    acc = quadrature.integrate(integrand, 0.0, t)
    return transition(sde, t) * np.atleast_1d(np.asarray(acc, dtype=np.float64))


def _kernel_end(sde: LinearSde) -> tuple[float, float, float]:
    zeta_end = transition(sde, sde.horizon)
    acc_end = noise_integral(sde, sde.horizon)
    k_end = zeta_end * zeta_end * acc_end
    if k_end <= DEGENERATE_KERNEL_TOL:
        raise DegenerateHorizon(
            f"kernel at the horizon is {k_end:.3e}; the reference process "
            "accumulates no usable noise"
        )
    return zeta_end, acc_end, k_end


def effective_sigma(sde: LinearSde) -> float:
    """Noise scale of the equivalent static coupling problem."""
    zeta_end, _, k_end = _kernel_end(sde)
    return math.sqrt(k_end / zeta_end)


@dataclass(frozen=True)
class SdeScalars:
    """Everything the bridge needs about the reference process at one time."""

    t: float
    horizon: float
    drift_coef: float
    vol: float
    transition: float
    transition_end: float
    kernel_tt: float
    kernel_end: float
    weight_end: float        # pull toward the horizon boundary
    weight_start: float      # pull toward the start boundary
    noise_fraction: float    # share of noise energy accumulated by t
    shift: np.ndarray
    offset: np.ndarray
    offset_end: np.ndarray
    d_weight_end: float
    d_weight_start: float
    d_offset: np.ndarray


def bridge_scalars(sde: LinearSde, t: float, dim: int) -> SdeScalars:
    """Transfer scalars (and their time derivatives) used by the bridge solver."""
    t = _check_time(sde, t)
    zeta_end, acc_end, k_end = _kernel_end(sde)
    zeta = transition(sde, t)
    acc = noise_integral(sde, t)
    kernel_tt = zeta * zeta * acc
    weight_end = zeta * zeta_end * acc / k_end
    weight_start = zeta - weight_end * zeta_end
    noise_fraction = acc / acc_end
    alpha = float(sde.drift_coef(t))
    g = float(sde.vol(t))
    m = shift_at(sde, t, dim)
    xi = offset(sde, t, dim)
    xi_end = offset(sde, sde.horizon, dim)
    d_weight_end = alpha * weight_end + zeta_end * g * g / (zeta * k_end)
    d_weight_start = alpha * zeta - zeta_end * d_weight_end
    d_offset = alpha * xi + m
    return SdeScalars(
        t=t,
        horizon=sde.horizon,
        drift_coef=alpha,
        vol=g,
        transition=zeta,
        transition_end=zeta_end,
        kernel_tt=kernel_tt,
        kernel_end=k_end,
        weight_end=weight_end,
        weight_start=weight_start,
        noise_fraction=noise_fraction,
        shift=m,
        offset=xi,
        offset_end=xi_end,
        d_weight_end=d_weight_end,
        d_weight_start=d_weight_start,
        d_offset=d_offset,
    )


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESET_NAMES = ("bm", "vesde", "vpsde", "sub_vpsde", "ou", "bdt")


def _positive(val: float, key: str) -> float:
    if not np.isfinite(val) or val <= 0.0:
        raise InvalidParams(f"{key} must be positive and finite, got {val}")
    return float(val)


def _bm(horizon: float, nu: float = 1.0) -> LinearSde:
    nu = _positive(nu, "nu")
    closed = ClosedForms(
        transition=lambda t: 1.0,
        noise_integral=lambda t: nu * nu * t,
    )
    return LinearSde(
        drift_coef=lambda t: 0.0,
        vol=lambda t: nu,
        horizon=horizon,
        closed=closed,
        name="bm",
        params={"nu": nu},
    )


def _vesde(horizon: float, sigma_min: float = 0.1, sigma_max: float = 2.0) -> LinearSde:
    sigma_min = _positive(sigma_min, "sigma_min")
    sigma_max = _positive(sigma_max, "sigma_max")
    if sigma_max <= sigma_min:
        raise InvalidParams(
            f"sigma_max must exceed sigma_min, got {sigma_max} <= {sigma_min}"
        )
    ratio = sigma_max / sigma_min
    log_ratio = math.log(ratio)
    scale = math.sqrt(2.0 * log_ratio / horizon)

    def sigma_t(t: float) -> float:
        return sigma_min * ratio ** (t / horizon)

    closed = ClosedForms(
        transition=lambda t: 1.0,
        noise_integral=lambda t: sigma_t(t) ** 2 - sigma_min**2,
    )
    return LinearSde(
        drift_coef=lambda t: 0.0,
        vol=lambda t: sigma_t(t) * scale,
        horizon=horizon,
        closed=closed,
        name="vesde",
        params={"sigma_min": sigma_min, "sigma_max": sigma_max},
    )


def _beta_schedule(horizon: float, beta_min: float, beta_max: float):
    if beta_min < 0.0 or not np.isfinite(beta_min):
        raise InvalidParams(f"beta_min must be >= 0 and finite, got {beta_min}")
    if beta_max <= beta_min or not np.isfinite(beta_max):
        raise InvalidParams(
            f"beta_max must exceed beta_min, got {beta_max} <= {beta_min}"
        )

    def beta(t: float) -> float:
        return beta_min + (t / horizon) * (beta_max - beta_min)

    def beta_acc(t: float) -> float:
        return beta_min * t + 0.5 * (beta_max - beta_min) * t * t / horizon

    return beta, beta_acc


def _vpsde(horizon: float, beta_min: float = 0.1, beta_max: float = 20.0) -> LinearSde:
    beta, beta_acc = _beta_schedule(horizon, beta_min, beta_max)
    closed = ClosedForms(
        transition=lambda t: math.exp(-0.5 * beta_acc(t)),
        noise_integral=lambda t: math.expm1(beta_acc(t)),
    )
    return LinearSde(
        drift_coef=lambda t: -0.5 * beta(t),
        vol=lambda t: math.sqrt(beta(t)),
        horizon=horizon,
        closed=closed,
        name="vpsde",
        params={"beta_min": beta_min, "beta_max": beta_max},
    )


def _sub_vpsde(horizon: float, beta_min: float = 0.1, beta_max: float = 4.0) -> LinearSde:
    beta, beta_acc = _beta_schedule(horizon, beta_min, beta_max)

    def noise_acc(t: float) -> float:
        half = 0.5 * beta_acc(t)
        gap = math.exp(half) - math.exp(-half)
        return gap * gap

    closed = ClosedForms(
        transition=lambda t: math.exp(-0.5 * beta_acc(t)),
        noise_integral=noise_acc,
    )
    return LinearSde(
        drift_coef=lambda t: -0.5 * beta(t),
        vol=lambda t: math.sqrt(beta(t) * -math.expm1(-2.0 * beta_acc(t))),
        horizon=horizon,
        closed=closed,
        name="sub_vpsde",
        params={"beta_min": beta_min, "beta_max": beta_max},
    )


def _ou(horizon: float, delta: float = 1.0, nu: float = 1.0, shift: float = 0.0) -> LinearSde:
    if not np.isfinite(delta) or delta == 0.0:
        raise InvalidParams(
            f"delta must be nonzero (use the 'bm' preset for delta=0), got {delta}"
        )
    nu = _positive(nu, "nu")
    shift_arr = np.asarray(shift, dtype=np.float64)
    # scalars stay scalar so downstream broadcasting works for any dim
    shift_vec = float(shift_arr) if shift_arr.ndim == 0 else shift_arr
    has_shift = bool(np.any(shift_arr != 0.0))
    closed = ClosedForms(
        transition=lambda t: math.exp(-delta * t),
        noise_integral=lambda t: nu * nu * math.expm1(2.0 * delta * t) / (2.0 * delta),
        offset=(lambda t: shift_vec * (-math.expm1(-delta * t) / delta)) if has_shift else None,
    )
    return LinearSde(
        drift_coef=lambda t: -delta,
        vol=lambda t: nu,
        horizon=horizon,
        shift=(lambda t: shift_vec) if has_shift else None,
        closed=closed,
        name="ou",
        params={"delta": delta, "nu": nu, "shift": np.asarray(shift, dtype=np.float64).tolist()},
    )


def _bdt(horizon: float, nu: float = 1.0, shift=0.0, offset_form=None) -> LinearSde:
    """Driftless unit-transition process with a time-varying shift.

    ``shift`` may be a constant (scalar or vector) or a callable of t; constant
    shifts get a closed-form response, callables integrate via quadrature
    unless ``offset_form`` supplies the antiderivative.
    """
    nu = _positive(nu, "nu")
    if callable(shift):
        shift_fn = shift
        offset_fn = offset_form
        shift_param = "callable"
    else:
        shift_arr = np.asarray(shift, dtype=np.float64)
        shift_vec = float(shift_arr) if shift_arr.ndim == 0 else shift_arr
        shift_fn = lambda t: shift_vec
        offset_fn = offset_form if offset_form is not None else (lambda t: shift_vec * t)
        shift_param = shift_arr.tolist()
    closed = ClosedForms(
        transition=lambda t: 1.0,
        noise_integral=lambda t: nu * nu * t,
        offset=offset_fn,
    )
    return LinearSde(
        drift_coef=lambda t: 0.0,
        vol=lambda t: nu,
        horizon=horizon,
        shift=shift_fn,
        closed=closed,
        name="bdt",
        params={"nu": nu, "shift": shift_param},
    )


_PRESETS = {
    "bm": _bm,
    "vesde": _vesde,
    "vpsde": _vpsde,
    "sub_vpsde": _sub_vpsde,
    "ou": _ou,
    "bdt": _bdt,
}


def preset(name: str, horizon: float = 1.0, **params) -> LinearSde:
    """Build one of the named reference processes.

    Names: ``bm`` (nu), ``vesde`` (sigma_min, sigma_max), ``vpsde`` /
    ``sub_vpsde`` (beta_min, beta_max), ``ou`` (delta, nu, shift), ``bdt``
    (nu, shift, offset_form). All closed forms included.
    """
    if name not in _PRESETS:
        raise InvalidParams(f"unknown preset {name!r}; choose from {sorted(_PRESETS)}")
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise InvalidParams(f"horizon must be positive and finite, got {horizon}")
    try:
        return _PRESETS[name](horizon, **params)
    except TypeError as exc:
        raise InvalidParams(f"bad parameters for preset {name!r}: {exc}") from exc
