"""Trajectory simulation and exact conditional sampling on a time grid.

Grids stay strictly inside the open time interval (endpoints are never
simulation nodes; the default clips one part in a thousand off each side).
Euler-Maruyama stepping adds the policy correction ``g_t Z(t, x)`` to the
closed-form bridge drift; with no policy the stepping collapses to the fused
affine kernel. Bridge sampling draws exact per-node conditionals given pinned
start (or end) points; draws are marginally exact at every node but
independent across nodes, which is all the losses consume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import bridge as bridge_mod
from . import kernels
from .bridge import GsbSolution
from .errors import DimensionMismatch, DivergedSimulation, InvalidParams
from .gaussian import Gaussian

__all__ = [
    "CLIP_FRACTION",
    "TimeGrid",
    "make_grid",
    "TrajectoryBatch",
    "euler_forward",
    "euler_backward",
    "sample_bridge",
    "sample_gaussian",
    "node_coefficients",
]

CLIP_FRACTION = 1e-3
TRAJECTORY_MAGIC = b"GSBT"
TRAJECTORY_VERSION = 1
_HEADER = struct.Struct("<4sIBBHIIIdddQ")
_DIRECTIONS = ("forward", "backward")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of n_steps transitions (n_steps + 1 nodes) inside (0, horizon)."""

    t_start: float
    t_end: float
    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_steps < 1:
            raise InvalidParams(f"n_steps must be >= 1, got {self.n_steps}")
        if not (0.0 < self.t_start < self.t_end < self.horizon):
            raise InvalidParams(
                f"grid must satisfy 0 < t_start < t_end < horizon, got "
                f"({self.t_start}, {self.t_end}, {self.horizon})"
            )

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(self.t_start, self.t_end, self.n_nodes)
        t.setflags(write=False)
        return t


def make_grid(
    horizon: float,
    n_steps: int,
    t_start: float | None = None,
    t_end: float | None = None,
    clip_fraction: float = CLIP_FRACTION,
) -> TimeGrid:
    """Build a simulation grid, clamping requested endpoints into the open interval."""
    if not np.isfinite(horizon) or horizon <= 0.0:
        raise InvalidParams(f"horizon must be positive, got {horizon}")
    if not 0.0 < clip_fraction < 0.5:
        raise InvalidParams(f"clip_fraction must lie in (0, 0.5), got {clip_fraction}")
    if n_steps < 2:
        raise InvalidParams(f"n_steps must be >= 2, got {n_steps}")
    lo = clip_fraction * horizon
    hi = (1.0 - clip_fraction) * horizon
    t_start = lo if t_start is None else min(max(float(t_start), lo), hi)
    t_end = hi if t_end is None else min(max(float(t_end), lo), hi)
    return TimeGrid(t_start=t_start, t_end=t_end, n_steps=int(n_steps), horizon=float(horizon))


@dataclass(frozen=True)
class TrajectoryBatch:
    """States on a grid for a batch of paths, with provenance (direction, seed)."""

    grid: TimeGrid
    states: np.ndarray
    direction: str
    seed: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 3 or states.shape[1] != self.grid.n_nodes:
            raise DimensionMismatch(
                f"states must have shape (n_paths, {self.grid.n_nodes}, dim), "
                f"got {states.shape}"
            )
        if self.direction not in _DIRECTIONS:
            raise InvalidParams(f"direction must be one of {_DIRECTIONS}, got {self.direction!r}")
        if not np.all(np.isfinite(states)):
            bad = int(np.size(states) - np.sum(np.isfinite(states)))
            raise DivergedSimulation(f"trajectory contains {bad} non-finite values")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(
            TRAJECTORY_MAGIC,
            TRAJECTORY_VERSION,
            0,  # dtype tag: float64
            _DIRECTIONS.index(self.direction),
            0,
            self.n_paths,
            self.grid.n_steps,
            self.dim,
            self.grid.t_start,
            self.grid.t_end,
            self.grid.horizon,
            self.seed,
        )
        return head + np.ascontiguousarray(self.states, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TrajectoryBatch":
        if len(blob) < _HEADER.size or blob[:4] != TRAJECTORY_MAGIC:
            raise InvalidParams("not a GSBT trajectory blob (bad magic)")
        (_, version, dtype_tag, direction_tag, _, n_paths, n_steps, dim,
         t_start, t_end, horizon, seed) = _HEADER.unpack_from(blob)
        if version != TRAJECTORY_VERSION:
            raise InvalidParams(f"unsupported GSBT version {version}")
        if dtype_tag != 0:
            raise InvalidParams(f"unsupported GSBT dtype tag {dtype_tag}")
        if direction_tag not in (0, 1):
            raise InvalidParams(f"unsupported GSBT direction tag {direction_tag}")
        grid = TimeGrid(t_start=t_start, t_end=t_end, n_steps=n_steps, horizon=horizon)
        expected = n_paths * grid.n_nodes * dim * 8
        payload = blob[_HEADER.size :]
        if len(payload) != expected:
            raise InvalidParams(
                f"GSBT payload has {len(payload)} bytes, expected {expected}"
            )
        states = np.frombuffer(payload, dtype="<f8").reshape(n_paths, grid.n_nodes, dim)
        return cls(grid=grid, states=states.copy(), direction=_DIRECTIONS[direction_tag],
                   seed=seed)

    def save(self, path) -> None:
        with open(str(path), "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TrajectoryBatch":
        with open(str(path), "rb") as fh:
            return cls.from_bytes(fh.read())

    def write_csv(self, path) -> None:
        """Inspection export: one row per (path, node) with time and coordinates."""
        times = self.grid.times
        with open(str(path), "w") as fh:
            cols = ",".join(f"x{i}" for i in range(self.dim))
            fh.write(f"path,node,t,{cols}\n")
            for p in range(self.n_paths):
                for k in range(self.grid.n_nodes):
                    coords = ",".join(repr(float(v)) for v in self.states[p, k])
                    fh.write(f"{p},{k},{times[k]!r},{coords}\n")


def _check_grid(sol: GsbSolution, grid: TimeGrid) -> None:
    if abs(grid.horizon - sol.sde.horizon) > 1e-12 * max(1.0, sol.sde.horizon):
        raise InvalidParams(
            f"grid horizon {grid.horizon} does not match the process horizon "
            f"{sol.sde.horizon}"
        )


def _check_points(sol: GsbSolution, points: np.ndarray, what: str) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != sol.dim:
        raise DimensionMismatch(f"{what} must have shape (n, {sol.dim}), got {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidParams(f"{what} must be finite")
    return points


def node_coefficients(sol: GsbSolution, grid: TimeGrid):
    """Affine drift pieces (A, b) and volatility g at every grid node."""
    _check_grid(sol, grid)
    d = sol.dim
    K = grid.n_nodes
    A = np.empty((K, d, d))
    b = np.empty((K, d))
    g = np.empty(K)
    for k, t in enumerate(grid.times):
        A[k], b[k] = bridge_mod.drift_matrix(sol, float(t))
        g[k] = float(sol.sde.vol(float(t)))
    return A, b, g


def euler_forward(
    sol: GsbSolution,
    policy,
    x0: np.ndarray,
    grid: TimeGrid,
    seed: int,
    stream: int = 0,
) -> TrajectoryBatch:
    """Euler-Maruyama forward run from start points under drift + g * policy.

    ``policy`` is any callable (t, states) -> corrections, or None for the
    reference drift alone (fused kernel path).
    """
    x0 = _check_points(sol, x0, "start points")
    A, b, g = node_coefficients(sol, grid)
    noise = kernels.normals(seed, x0.shape[0], grid.n_steps, sol.dim, stream=stream)
    if policy is None:
        states = kernels.euler_affine(x0, A, b, g, grid.dt, noise, reverse=False)
    else:
        states = _euler_policy(x0, A, b, g, grid, noise, policy, forward=True)
    return TrajectoryBatch(grid=grid, states=states, direction="forward", seed=seed)


def euler_backward(
    sol: GsbSolution,
    policy,
    x_end: np.ndarray,
    grid: TimeGrid,
    seed: int,
    stream: int = 0,
) -> TrajectoryBatch:
    """Euler-Maruyama backward run from end points under drift - g * policy."""
    x_end = _check_points(sol, x_end, "end points")
    A, b, g = node_coefficients(sol, grid)
    noise = kernels.normals(seed, x_end.shape[0], grid.n_steps, sol.dim, stream=stream)
    if policy is None:
        states = kernels.euler_affine(x_end, A, b, g, grid.dt, noise, reverse=True)
    else:
        states = _euler_policy(x_end, A, b, g, grid, noise, policy, forward=False)
    return TrajectoryBatch(grid=grid, states=states, direction="backward", seed=seed)


_STATE_CAP = 1e100


def _step_guard(x: np.ndarray, t: float) -> None:
    # catches runaway policies before states overflow to inf
    if not np.all(np.isfinite(x)) or np.abs(x).max() > _STATE_CAP:
        raise DivergedSimulation(f"state exploded at t={t:.6g}")


def _euler_policy(x_init, A, b, g, grid, noise, policy, forward: bool):
    n, d = x_init.shape
    K = grid.n_nodes
    dt = grid.dt
    sq = np.sqrt(dt)
    times = grid.times
    states = np.empty((n, K, d))
    if forward:
        states[:, 0, :] = x_init
        for k in range(K - 1):
            x = states[:, k, :]
            drift_x = x @ A[k].T + b[k] + g[k] * policy(float(times[k]), x)
            states[:, k + 1, :] = x + drift_x * dt + (g[k] * sq) * noise[:, k, :]
            _step_guard(states[:, k + 1, :], float(times[k + 1]))
    else:
        states[:, K - 1, :] = x_init
        for k in range(K - 1, 0, -1):
            x = states[:, k, :]
            drift_x = x @ A[k].T + b[k] - g[k] * policy(float(times[k]), x)
            states[:, k - 1, :] = x - drift_x * dt + (g[k] * sq) * noise[:, k - 1, :]
            _step_guard(states[:, k - 1, :], float(times[k - 1]))
    return states


def sample_bridge(
    sol: GsbSolution,
    pinned: str,
    points: np.ndarray,
    grid: TimeGrid,
    seed: int,
    stream: int = 0,
) -> TrajectoryBatch:
    """Exact conditional draws at every grid node given pinned endpoints.

    ``pinned`` is "start" or "end". Each node's draw follows the exact
    conditional law given the pinned point; draws are independent across
    nodes (no path dependence), which matches what the losses integrate.
    Mixing over points drawn from the boundary Gaussian reproduces the
    bridge marginal at every node.
    """
    if pinned not in ("start", "end"):
        raise InvalidParams(f"pinned must be 'start' or 'end', got {pinned!r}")
    points = _check_points(sol, points, f"{pinned} points")
    _check_grid(sol, grid)
    n, d = points.shape
    K = grid.n_nodes
    noise = kernels.normals(seed, n, K, d, stream=stream)
    states = np.empty((n, K, d))
    if pinned == "start":
        other_mean = sol.end.mean + (points - sol.start.mean) @ sol.end_gain
        base = sol.cond_end_cov
    else:
        other_mean = sol.start.mean + (points - sol.end.mean) @ sol.start_gain
        base = sol.cond_start_cov
    vecs = base.eigenvectors
    vals = base.eigenvalues
    for k, t in enumerate(grid.times):
        sc = sol.scalars(float(t))
        w_pin = sc.weight_start if pinned == "start" else sc.weight_end
        w_other = sc.weight_end if pinned == "start" else sc.weight_start
        shift = sc.offset - sc.weight_end * sc.offset_end
        mean_k = w_pin * points + w_other * other_mean + shift
        ridge = sc.kernel_tt * (1.0 - sc.noise_fraction)
        root = vecs @ (np.sqrt(w_other * w_other * vals + ridge)[:, None] * vecs.T)
        states[:, k, :] = mean_k + noise[:, k, :] @ root
    direction = "forward" if pinned == "start" else "backward"
    return TrajectoryBatch(grid=grid, states=states, direction=direction, seed=seed)


def sample_gaussian(gauss: Gaussian, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """Draw n exact samples from a Gaussian via the counter-based generator."""
    if n < 0:
        raise InvalidParams(f"sample count must be >= 0, got {n}")
    eps = kernels.point_normals(seed, n, gauss.dim, stream=stream)
    return gauss.mean + eps @ gauss.cov.sqrt()
