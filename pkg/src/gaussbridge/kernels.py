"""Hot numerical kernels, each with a numba and a pure-numpy implementation.

Backend selection: env var ``GSB_NUMBA`` set to ``"1"`` requires numba, ``"0"``
forces the numpy twins, unset/``"auto"`` uses numba when importable. Tests and
benchmarks can switch at runtime with :func:`set_backend`. ``GSB_THREADS`` caps
the numba worker pool.

Randomness is counter-based (Philox4x32-10, the standard multipliers and round
keys) so a draw for (seed, path, node, block, stream) never depends on array
extents or generation order; replaying any slice of a run is cheap and exact.
The integer core is backend-dispatched and bit-identical either way; the
Box-Muller step always runs through numpy so produced normals do not depend on
the backend at all.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import DimensionMismatch, InvalidParams

__all__ = [
    "HAS_NUMBA",
    "backend_name",
    "set_backend",
    "philox4x32",
    "normals",
    "point_normals",
    "euler_affine",
    "sinkhorn_log",
]

try:
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

_PHILOX_M0 = 0xD2511F53
_PHILOX_M1 = 0xCD9E8D57
_PHILOX_K0 = 0x9E3779B9
_PHILOX_K1 = 0xBB67AE85
_MASK32 = 0xFFFFFFFF
_ROUNDS = 10

_BACKEND: str | None = None


def _configure_threads() -> None:
    raw = os.environ.get("GSB_THREADS")
    if raw is None or not HAS_NUMBA:
        return
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParams(f"GSB_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise InvalidParams(f"GSB_THREADS must be a positive integer, got {raw!r}")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _resolve_backend() -> str:
    flag = os.environ.get("GSB_NUMBA", "auto").strip().lower()
    if flag in ("1", "numba"):
        if not HAS_NUMBA:
            raise InvalidParams("GSB_NUMBA=1 requires numba, which is not importable")
        return "numba"
    if flag in ("0", "numpy"):
        return "numpy"
    if flag in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    raise InvalidParams(f"GSB_NUMBA must be one of '0', '1', 'auto', got {flag!r}")


def backend_name() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    global _BACKEND
    if _BACKEND is None:
        _BACKEND = _resolve_backend()
        _configure_threads()
    return _BACKEND


def set_backend(name: str) -> str:
    """Force the kernel backend at runtime. Returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise InvalidParams(f"backend must be 'numba' or 'numpy', got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise InvalidParams("numba backend requested but numba is not importable")
    previous = backend_name()
    _BACKEND = name
    return previous


# ---------------------------------------------------------------------------
# Philox4x32-10 counter-based generator
# ---------------------------------------------------------------------------


def philox4x32(counter, key, rounds: int = _ROUNDS):
    """Run the raw Philox4x32 block function on uint32 lanes.

    ``counter`` has shape (..., 4) and ``key`` shape (..., 2); both are taken
    mod 2^32. Returns the output block with shape (..., 4) as uint64 words in
    [0, 2^32). Exposed mainly so known-answer vectors can pin the core.
    """
    counter = np.asarray(counter, dtype=np.uint64)
    key = np.asarray(key, dtype=np.uint64)
    c0 = counter[..., 0] & np.uint64(_MASK32)
    c1 = counter[..., 1] & np.uint64(_MASK32)
    c2 = counter[..., 2] & np.uint64(_MASK32)
    c3 = counter[..., 3] & np.uint64(_MASK32)
    k0 = key[..., 0] & np.uint64(_MASK32)
    k1 = key[..., 1] & np.uint64(_MASK32)
    c0, c1, c2, c3 = _philox_rounds_numpy(c0, c1, c2, c3, k0, k1, rounds)
    return np.stack([c0, c1, c2, c3], axis=-1)


def _philox_rounds_numpy(c0, c1, c2, c3, k0, k1, rounds=_ROUNDS):
    mask = np.uint64(_MASK32)
    m0 = np.uint64(_PHILOX_M0)
    m1 = np.uint64(_PHILOX_M1)
    w0 = np.uint64(_PHILOX_K0)
    w1 = np.uint64(_PHILOX_K1)
    shift = np.uint64(32)
    for _ in range(rounds):
        p0 = m0 * c0
        p1 = m1 * c2
        hi0 = p0 >> shift
        lo0 = p0 & mask
        hi1 = p1 >> shift
        lo1 = p1 & mask
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + w0) & mask
        k1 = (k1 + w1) & mask
    return c0, c1, c2, c3


def _philox_words_numpy(seed: int, n_paths: int, n_nodes: int, n_blocks: int, stream: int):
    # Scalar/key lanes broadcast against the counter axes; shapes grow to
    # (n_paths, n_nodes, n_blocks) inside the round loop.
    c0 = np.arange(n_paths, dtype=np.uint64)[:, None, None]
    c1 = np.arange(n_nodes, dtype=np.uint64)[None, :, None]
    c2 = np.arange(n_blocks, dtype=np.uint64)[None, None, :]
    c3 = np.uint64(stream & _MASK32)
    k0 = np.uint64(seed & _MASK32)
    k1 = np.uint64((seed >> 32) & _MASK32)
    x0, x1, x2, x3 = _philox_rounds_numpy(c0, c1, c2, c3, k0, k1)
    shape = (n_paths, n_nodes, n_blocks)
    return (
        np.broadcast_to(x0, shape),
        np.broadcast_to(x1, shape),
        np.broadcast_to(x2, shape),
        np.broadcast_to(x3, shape),
    )


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _philox_words_numba(seed, n_paths, n_nodes, n_blocks, stream):  # pragma: no cover
        mask = np.uint64(0xFFFFFFFF)
        m0 = np.uint64(0xD2511F53)
        m1 = np.uint64(0xCD9E8D57)
        w0 = np.uint64(0x9E3779B9)
        w1 = np.uint64(0xBB67AE85)
        shift = np.uint64(32)
        key0 = np.uint64(seed) & mask
        key1 = (np.uint64(seed) >> shift) & mask
        s3 = np.uint64(stream) & mask
        x0 = np.empty((n_paths, n_nodes, n_blocks), dtype=np.uint64)
        x1 = np.empty((n_paths, n_nodes, n_blocks), dtype=np.uint64)
        x2 = np.empty((n_paths, n_nodes, n_blocks), dtype=np.uint64)
        x3 = np.empty((n_paths, n_nodes, n_blocks), dtype=np.uint64)
        for p in prange(n_paths):
            for s in range(n_nodes):
                for b in range(n_blocks):
                    c0 = np.uint64(p)
                    c1 = np.uint64(s)
                    c2 = np.uint64(b)
                    c3 = s3
                    k0 = key0
                    k1 = key1
                    for _ in range(10):
                        p0 = m0 * c0
                        p1 = m1 * c2
                        hi0 = p0 >> shift
                        lo0 = p0 & mask
                        hi1 = p1 >> shift
                        lo1 = p1 & mask
                        c0 = hi1 ^ c1 ^ k0
                        c1 = lo1
                        c2 = hi0 ^ c3 ^ k1
                        c3 = lo0
                        k0 = (k0 + w0) & mask
                        k1 = (k1 + w1) & mask
                    x0[p, s, b] = c0
                    x1[p, s, b] = c1
                    x2[p, s, b] = c2
                    x3[p, s, b] = c3
        return x0, x1, x2, x3


def _validate_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidParams(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def normals(seed: int, n_paths: int, n_nodes: int, dim: int, stream: int = 0) -> np.ndarray:
    """Standard-normal draws of shape (n_paths, n_nodes, dim).

    Counter-based: entry (p, s, :) depends only on (seed, p, s, stream), so a
    subarray of a larger request equals the smaller request exactly.
    """
    seed = _validate_seed(seed)
    if n_paths < 0 or n_nodes < 0 or dim <= 0:
        raise InvalidParams(
            f"normals needs non-negative counts and positive dim, got "
            f"({n_paths}, {n_nodes}, {dim})"
        )
    n_blocks = (dim + 1) // 2
    if backend_name() == "numba":
        x0, x1, x2, x3 = _philox_words_numba(
            np.uint64(seed), n_paths, n_nodes, n_blocks, np.uint64(stream & _MASK32)
        )
    else:
        x0, x1, x2, x3 = _philox_words_numpy(seed, n_paths, n_nodes, n_blocks, stream)
    shift = np.uint64(32)
    hi_one = np.uint64(1)
    scale = 2.0**-53
    u1 = ((((x0 << shift) | x1) >> np.uint64(11)) + hi_one).astype(np.float64) * scale
    u2 = ((((x2 << shift) | x3) >> np.uint64(11)) + hi_one).astype(np.float64) * scale
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * np.pi) * u2
    out = np.empty((n_paths, n_nodes, 2 * n_blocks), dtype=np.float64)
    out[:, :, 0::2] = radius * np.cos(angle)
    out[:, :, 1::2] = radius * np.sin(angle)
    return np.ascontiguousarray(out[:, :, :dim])


def point_normals(seed: int, n: int, dim: int, stream: int = 0) -> np.ndarray:
    """Standard-normal draws of shape (n, dim) on a dedicated stream."""
    return normals(seed, n, 1, dim, stream=stream)[:, 0, :]


# ---------------------------------------------------------------------------
# Euler-Maruyama stepping for an affine drift (zero-policy fast path)
# ---------------------------------------------------------------------------


def _euler_affine_numpy(x_init, At, b, g, dt, noise, reverse):
    # At[k] is the transposed drift matrix so batches multiply as x @ At[k].
    n, d = x_init.shape
    n_nodes = At.shape[0]
    states = np.empty((n, n_nodes, d), dtype=np.float64)
    sq = math.sqrt(dt)
    if not reverse:
        states[:, 0, :] = x_init
        for k in range(n_nodes - 1):
            x = states[:, k, :]
            states[:, k + 1, :] = x + (x @ At[k] + b[k]) * dt + (g[k] * sq) * noise[:, k, :]
    else:
        states[:, n_nodes - 1, :] = x_init
        for k in range(n_nodes - 1, 0, -1):
            x = states[:, k, :]
            states[:, k - 1, :] = x - (x @ At[k] + b[k]) * dt + (g[k] * sq) * noise[:, k - 1, :]
    return states


if HAS_NUMBA:

    @njit(cache=True)
    def _euler_affine_numba(x_init, At, b, g, dt, noise, reverse):  # pragma: no cover
        n, d = x_init.shape
        n_nodes = At.shape[0]
        states = np.empty((n, n_nodes, d), dtype=np.float64)
        sq = math.sqrt(dt)
        if not reverse:
            states[:, 0, :] = x_init
            for k in range(n_nodes - 1):
                x = np.ascontiguousarray(states[:, k, :])
                states[:, k + 1, :] = x + (x @ At[k] + b[k]) * dt + (g[k] * sq) * noise[:, k, :]
        else:
            states[:, n_nodes - 1, :] = x_init
            for k in range(n_nodes - 1, 0, -1):
                x = np.ascontiguousarray(states[:, k, :])
                states[:, k - 1, :] = x - (x @ At[k] + b[k]) * dt + (g[k] * sq) * noise[:, k - 1, :]
        return states


def euler_affine(x_init, A, b, g, dt: float, noise, reverse: bool = False) -> np.ndarray:
    """Integrate dX = (A_t X + b_t) dt + g_t dW on a uniform grid.

    ``A`` is (K, d, d), ``b`` (K, d), ``g`` (K,), one entry per grid node; the
    transition out of node k uses index k. Forward runs fill nodes 0..K-1 from
    ``x_init`` at node 0 and consume ``noise[:, k]`` for the step k -> k+1;
    reverse runs start at node K-1 and consume ``noise[:, k-1]`` for k -> k-1,
    flipping the drift sign. Returns states of shape (n, K, d).
    """
    x_init = np.ascontiguousarray(x_init, dtype=np.float64)
    A = np.ascontiguousarray(A, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    n, d = x_init.shape
    n_nodes = A.shape[0]
    if A.shape != (n_nodes, d, d) or b.shape != (n_nodes, d) or g.shape != (n_nodes,):
        raise DimensionMismatch("euler_affine: coefficient arrays disagree on shape")
    if noise.shape != (n, n_nodes - 1, d):
        raise DimensionMismatch(
            f"euler_affine: noise must have shape {(n, n_nodes - 1, d)}, got {noise.shape}"
        )
    if dt <= 0.0:
        raise InvalidParams(f"euler_affine: dt must be positive, got {dt}")
    At = np.ascontiguousarray(A.transpose(0, 2, 1))
    if backend_name() == "numba":
        return _euler_affine_numba(x_init, At, b, g, dt, noise, reverse)
    return _euler_affine_numpy(x_init, At, b, g, dt, noise, reverse)


# ---------------------------------------------------------------------------
# Log-domain Sinkhorn sweeps
# ---------------------------------------------------------------------------


def _sinkhorn_log_numpy(C, loga, logb, eps, max_iters, tol, check_every):
    Mr = C / -eps
    u = np.zeros(C.shape[0])
    v = np.zeros(C.shape[1])
    err = np.inf
    a = np.exp(loga)
    iters = 0
    for iters in range(1, max_iters + 1):
        t = Mr + v[None, :]
        mx = t.max(axis=1)
        u = loga - (mx + np.log(np.exp(t - mx[:, None]).sum(axis=1)))
        t = Mr + u[:, None]
        mx = t.max(axis=0)
        v = logb - (mx + np.log(np.exp(t - mx[None, :]).sum(axis=0)))
        if iters % check_every == 0 or iters == max_iters:
            logp = Mr + u[:, None] + v[None, :]
            err = np.max(np.abs(np.exp(logp).sum(axis=1) - a))
            if err <= tol:
                break
    return u, v, iters, err


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _sinkhorn_log_numba(C, loga, logb, eps, max_iters, tol, check_every):  # pragma: no cover
        n, m = C.shape
        Mr = C / -eps
        Mc = np.ascontiguousarray(Mr.T)
        u = np.zeros(n)
        v = np.zeros(m)
        a = np.exp(loga)
        err = np.inf
        iters = 0
        for it in range(1, max_iters + 1):
            iters = it
            for i in prange(n):
                mx = -np.inf
                for j in range(m):
                    t = Mr[i, j] + v[j]
                    if t > mx:
                        mx = t
                acc = 0.0
                for j in range(m):
                    acc += np.exp(Mr[i, j] + v[j] - mx)
                u[i] = loga[i] - (mx + np.log(acc))
            for j in prange(m):
                mx = -np.inf
                for i in range(n):
                    t = Mc[j, i] + u[i]
                    if t > mx:
                        mx = t
                acc = 0.0
                for i in range(n):
                    acc += np.exp(Mc[j, i] + u[i] - mx)
                v[j] = logb[j] - (mx + np.log(acc))
            if it % check_every == 0 or it == max_iters:
                # conditional assignment is not a prange reduction: collect
                # per-row gaps, then take the max serially
                gaps = np.empty(n)
                for i in prange(n):
                    row = 0.0
                    for j in range(m):
                        row += np.exp(Mr[i, j] + u[i] + v[j])
                    gaps[i] = abs(row - a[i])
                err = gaps.max()
                if err <= tol:
                    break
        return u, v, iters, err


def sinkhorn_log(C, loga, logb, eps: float, max_iters: int = 2000, tol: float = 1e-8,
                 check_every: int = 10):
    """Log-domain Sinkhorn iterations for entropy-regularized transport.

    Returns scaled dual potentials ``(u, v, iters, err, converged)`` such that
    the optimal plan is ``exp(u[:, None] + v[None, :] - C / eps)``. ``err`` is
    the max-abs row-marginal violation at the last check; column marginals are
    exact after every sweep.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    loga = np.ascontiguousarray(loga, dtype=np.float64)
    logb = np.ascontiguousarray(logb, dtype=np.float64)
    if C.ndim != 2 or loga.shape != (C.shape[0],) or logb.shape != (C.shape[1],):
        raise InvalidParams("sinkhorn_log: cost/marginal shapes disagree")
    if eps <= 0.0:
        raise InvalidParams(f"sinkhorn_log: eps must be positive, got {eps}")
    if max_iters < 1:
        raise InvalidParams(f"sinkhorn_log: max_iters must be >= 1, got {max_iters}")
    if backend_name() == "numba":
        u, v, iters, err = _sinkhorn_log_numba(
            C, loga, logb, eps, max_iters, tol, check_every
        )
    else:
        u, v, iters, err = _sinkhorn_log_numpy(
            C, loga, logb, eps, max_iters, tol, check_every
        )
    return u, v, int(iters), float(err), bool(err <= tol)
