"""Adaptive Simpson quadrature for scalar- or vector-valued integrands.

Small and self-contained on purpose: the integrands here (squared volatility
ratios, shift responses) are smooth, so classic adaptive Simpson with the
Richardson error estimate is plenty, and keeping it local pins the failure
semantics (:class:`~gaussbridge.errors.QuadratureFailure`) instead of inheriting
whatever a library backend does.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import InvalidParams, QuadratureFailure

__all__ = ["integrate"]

DEFAULT_TOL = 1e-10
MAX_DEPTH = 40


def _simpson(fa, fm, fb, width):
    return (width / 6.0) * (fa + 4.0 * fm + fb)


def integrate(
    f: Callable[[float], "float | np.ndarray"],
    a: float,
    b: float,
    tol: float = DEFAULT_TOL,
    max_depth: int = MAX_DEPTH,
):
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    ``f`` may return a float or an ndarray (integrated componentwise, with the
    max-abs error controlling refinement). Returns the same shape ``f`` does.
    Raises :class:`QuadratureFailure` if the local error estimate still exceeds
    the budget at ``max_depth`` bisections.
    """
    if not np.isfinite(a) or not np.isfinite(b):
        raise InvalidParams(f"integration bounds must be finite, got [{a}, {b}]")
    if tol <= 0.0:
        raise InvalidParams(f"quadrature tolerance must be positive, got {tol}")
    if a == b:
        zero = np.asarray(f(a), dtype=float) * 0.0
        return float(zero) if zero.ndim == 0 else zero
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0

    fa = np.asarray(f(a), dtype=float)
    fb = np.asarray(f(b), dtype=float)
    m = 0.5 * (a + b)
    fm = np.asarray(f(m), dtype=float)
    whole = _simpson(fa, fm, fb, b - a)
    value = _recurse(f, a, b, fa, fm, fb, whole, tol, max_depth)
    value = sign * value
    return float(value) if value.ndim == 0 else value


def _recurse(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = np.asarray(f(lm), dtype=float)
    frm = np.asarray(f(rm), dtype=float)
    left = _simpson(fa, flm, fm, m - a)
    right = _simpson(fm, frm, fb, b - m)
    err = np.max(np.abs(left + right - whole))
    # Richardson: |S_fine - S_coarse| / 15 estimates the fine-grid error.
    if err <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    if depth <= 0:
        raise QuadratureFailure(
            f"adaptive Simpson failed on [{a}, {b}]: error estimate {err / 15.0:.3e} "
            f"exceeds tolerance {tol:.3e} at maximum depth"
        )
    half = 0.5 * tol
    return _recurse(f, a, m, fa, flm, fm, left, half, depth - 1) + _recurse(
        f, m, b, fm, frm, fb, right, half, depth - 1
    )
