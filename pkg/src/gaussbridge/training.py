"""Training pipeline: moment fitting, pretraining on exact conditional draws,
and alternating refinement of the forward/backward policy pair on cached
simulated trajectories.

Every random choice is keyed off ``TrainConfig.seed`` through SeedSequence
derivation, so a full run is reproducible bit for bit on a fixed backend.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .bridge import GsbProblem, GsbSolution, solve
from .errors import ConfigError, DivergedSimulation, InvalidParams, NonFiniteLoss
from .metrics import estimate_moments
from .policy import (
    AdamState,
    PolicyNetwork,
    adam_step,
    ema_policy,
    ema_update,
    load_checkpoint,
    save_checkpoint,
    weighted_loss_and_grad,
)
from .sde import LinearSde, preset
from .simulate import TimeGrid, euler_backward, euler_forward, make_grid

__all__ = [
    "TrainConfig",
    "RunState",
    "derive_seed",
    "expected_sim_count",
    "init_state",
    "pretrain",
    "train_alternating",
    "generate",
    "save_state",
    "load_state",
]

# Integer tags for seed derivation; values are arbitrary but frozen, since
# changing them silently changes every downstream stream.
_TAG_INIT_FORWARD = 1
_TAG_INIT_BACKWARD = 2
_TAG_PRETRAIN_BACKWARD = 3
_TAG_PRETRAIN_FORWARD = 4
_TAG_SIM_FORWARD = 5
_TAG_SIM_BACKWARD = 6
_TAG_PAIRS_BACKWARD = 7
_TAG_PAIRS_FORWARD = 8
_TAG_GENERATE = 9

_SUB_INDICES = 0
_SUB_NOISE = 1


def derive_seed(root: int, *parts: int) -> int:
    """Stable 64-bit child seed from a root seed and integer path."""
    ss = np.random.SeedSequence((int(root),) + tuple(int(p) for p in parts))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TrainConfig:
    sde_name: str = "vesde"
    sde_params: dict = field(default_factory=dict)
    horizon: float = 1.0
    hidden: tuple = (128, 128, 128, 128)
    pretrain_iters_backward: int = 1000
    pretrain_iters_forward: int = 1000
    outer_iters: int = 20
    inner_iters: int = 500
    cache_every: int = 100
    batch_size: int = 256
    n_cache_paths: int = 512
    n_steps: int = 100
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    ema_decay: float = 0.99
    shrinkage: float = 1e-3
    seed: int = 0
    pin_forward_zero: bool = False
    cold_start: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in (
            "pretrain_iters_backward", "pretrain_iters_forward", "outer_iters",
            "inner_iters", "cache_every", "batch_size", "n_cache_paths", "n_steps",
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or v < (0 if name.startswith("pretrain") else 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.cache_every > self.inner_iters:
            raise ConfigError(
                "cache_every must not exceed inner_iters "
                f"({self.cache_every} > {self.inner_iters})"
            )
        for name in ("horizon", "lr"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0.0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ConfigError(f"shrinkage must lie in [0, 1], got {self.shrinkage}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden must be non-empty positive widths, got {self.hidden}")

    def build_sde(self) -> LinearSde:
        return preset(self.sde_name, horizon=self.horizon, **self.sde_params)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def expected_sim_count(config: TrainConfig) -> int:
    """Cache refreshes per trained direction over a full alternating run."""
    return config.outer_iters * math.ceil(config.inner_iters / config.cache_every)


@dataclass
class RunState:
    config: TrainConfig
    sde: LinearSde
    sol: GsbSolution
    net_forward: PolicyNetwork
    net_backward: PolicyNetwork
    opt_forward: AdamState
    opt_backward: AdamState
    history: list = field(default_factory=list)
    sim_counts: dict = field(default_factory=lambda: {"forward": 0, "backward": 0})


def _build_solution(config: TrainConfig, sde: LinearSde, data_start, data_end) -> GsbSolution:
    start = estimate_moments(data_start, shrinkage=config.shrinkage)
    end = estimate_moments(data_end, shrinkage=config.shrinkage)
    return solve(GsbProblem(sde=sde, start=start, end=end))


def init_state(config: TrainConfig, data_start, data_end, sde: LinearSde | None = None) -> RunState:
    """Cold state: fitted Gaussian ends, solved bridge, zero-output policies."""
    sde = sde or config.build_sde()
    sol = _build_solution(config, sde, data_start, data_end)
    dim = sol.dim
    net_f = PolicyNetwork.create(
        dim, sde.horizon, hidden=config.hidden,
        seed=derive_seed(config.seed, _TAG_INIT_FORWARD),
    )
    net_b = PolicyNetwork.create(
        dim, sde.horizon, hidden=config.hidden,
        seed=derive_seed(config.seed, _TAG_INIT_BACKWARD),
    )
    opt_f = AdamState.create(
        net_f, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        eps=config.adam_eps, ema_decay=config.ema_decay,
    )
    opt_b = AdamState.create(
        net_b, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        eps=config.adam_eps, ema_decay=config.ema_decay,
    )
    return RunState(
        config=config, sde=sde, sol=sol,
        net_forward=net_f, net_backward=net_b,
        opt_forward=opt_f, opt_backward=opt_b,
    )


class _NodeTable:
    """Bridge-conditional coefficients at every grid node for one pinned side.

    Lets pretraining draw exact conditional samples at arbitrary (node, point)
    pairs in one vectorized shot instead of one node at a time.
    """

    def __init__(self, sol: GsbSolution, grid: TimeGrid, pinned: str):
        if pinned not in ("start", "end"):
            raise InvalidParams(f"pinned must be 'start' or 'end', got {pinned!r}")
        self.pinned = pinned
        self.sol = sol
        self.times = grid.times
        if pinned == "start":
            base = sol.cond_end_cov
        else:
            base = sol.cond_start_cov
        vecs, vals = base.eigenvectors, base.eigenvalues
        K = grid.n_nodes
        d = sol.dim
        self.w_pin = np.empty(K)
        self.w_other = np.empty(K)
        self.shift = np.empty((K, d))
        self.roots = np.empty((K, d, d))
        for k, t in enumerate(grid.times):
            sc = sol.scalars(float(t))
            if pinned == "start":
                self.w_pin[k] = sc.weight_start
                self.w_other[k] = sc.weight_end
            else:
                self.w_pin[k] = sc.weight_end
                self.w_other[k] = sc.weight_start
            self.shift[k] = sc.offset - sc.weight_end * sc.offset_end
            ridge = sc.kernel_tt * (1.0 - sc.noise_fraction)
            scaled = self.w_other[k] ** 2 * vals + ridge
            self.roots[k] = vecs @ (np.sqrt(scaled)[:, None] * vecs.T)

    def other_mean(self, points: np.ndarray) -> np.ndarray:
        sol = self.sol
        if self.pinned == "start":
            return sol.end.mean + (points - sol.start.mean) @ sol.end_gain
        return sol.start.mean + (points - sol.end.mean) @ sol.start_gain

    def rows(self, points: np.ndarray, node_idx: np.ndarray, noise: np.ndarray):
        """Times and exact conditional draws for per-row (point, node) pairs."""
        om = self.other_mean(points)
        w_pin = self.w_pin[node_idx][:, None]
        w_other = self.w_other[node_idx][:, None]
        mean = w_pin * points + w_other * om + self.shift[node_idx]
        draw = mean + np.einsum("ni,nij->nj", noise, self.roots[node_idx])
        return self.times[node_idx], draw


def _pretrain_phase(
    config: TrainConfig,
    state: RunState,
    grid: TimeGrid,
    table: _NodeTable,
    pins: np.ndarray,
    train_net: PolicyNetwork,
    frozen_net: PolicyNetwork,
    opt: AdamState,
    n_iters: int,
    tag: int,
    phase: str,
):
    span = grid.t_end - grid.t_start
    n_pool = pins.shape[0]
    n_left = grid.n_nodes - 1
    for step in range(n_iters):
        rng = np.random.default_rng(derive_seed(config.seed, tag, step, _SUB_INDICES))
        rows = rng.integers(0, n_pool, size=config.batch_size)
        nodes = rng.integers(0, n_left, size=config.batch_size)
        noise = kernels.point_normals(
            derive_seed(config.seed, tag, step, _SUB_NOISE),
            config.batch_size, state.sol.dim,
        )
        t_rows, x_rows = table.rows(pins[rows], nodes, noise)
        weights = np.full(config.batch_size, span / config.batch_size)
        loss, grads = weighted_loss_and_grad(
            train_net, frozen_net, state.sde, t_rows, x_rows, weights
        )
        adam_step(train_net, grads, opt)
        ema_update(opt, train_net)
        state.history.append({"phase": phase, "step": step, "loss": loss})


def pretrain(
    config: TrainConfig,
    data_start: np.ndarray,
    data_end: np.ndarray,
    sde: LinearSde | None = None,
) -> RunState:
    """Warm up both policies on exact conditional draws; no SDE integration.

    The backward policy trains first on draws pinned at sampled start points;
    the forward policy then trains on draws pinned at sampled end points with
    the warmed backward policy frozen in its cross term. With
    ``pin_forward_zero`` the forward phase is skipped and that policy stays
    exactly zero.
    """
    state = init_state(config, data_start, data_end, sde=sde)
    grid = make_grid(state.sde.horizon, config.n_steps)
    data_start = np.asarray(data_start, dtype=np.float64)
    data_end = np.asarray(data_end, dtype=np.float64)

    table_fwd = _NodeTable(state.sol, grid, "start")
    _pretrain_phase(
        config, state, grid, table_fwd, data_start,
        state.net_backward, state.net_forward, state.opt_backward,
        config.pretrain_iters_backward, _TAG_PRETRAIN_BACKWARD, "pretrain_backward",
    )
    if not config.pin_forward_zero:
        table_bwd = _NodeTable(state.sol, grid, "end")
        _pretrain_phase(
            config, state, grid, table_bwd, data_end,
            state.net_forward, state.net_backward, state.opt_forward,
            config.pretrain_iters_forward, _TAG_PRETRAIN_FORWARD, "pretrain_forward",
        )
    return state


def _cache_rows(config, grid, cache_states, rng):
    n_paths, n_nodes, d = cache_states.shape
    path_idx = rng.integers(0, n_paths, size=config.batch_size)
    node_idx = rng.integers(0, n_nodes - 1, size=config.batch_size)
    t_rows = grid.times[node_idx]
    x_rows = cache_states[path_idx, node_idx, :]
    span = grid.t_end - grid.t_start
    weights = np.full(config.batch_size, span / config.batch_size)
    return t_rows, x_rows, weights


def _save_abort_checkpoints(checkpoint_dir, state: RunState):
    os.makedirs(checkpoint_dir, exist_ok=True)
    save_checkpoint(
        os.path.join(checkpoint_dir, "abort_forward.gsbp"),
        state.net_forward, state.opt_forward, state.config.seed,
        meta={"role": "forward", "status": "aborted"},
    )
    save_checkpoint(
        os.path.join(checkpoint_dir, "abort_backward.gsbp"),
        state.net_backward, state.opt_backward, state.config.seed,
        meta={"role": "backward", "status": "aborted"},
    )


def train_alternating(
    config: TrainConfig,
    data_start: np.ndarray,
    data_end: np.ndarray,
    state: RunState,
    checkpoint_dir=None,
    on_outer_end=None,
) -> RunState:
    """Alternating refinement on cached simulated trajectories.

    Per outer iteration the backward policy trains first on trajectories
    simulated under the current (raw, non-averaged) forward policy, then the
    roles swap. Caches refresh every ``cache_every`` inner steps, so each
    trained direction simulates exactly ``expected_sim_count(config)`` times
    over the run. Optimizer state is fresh here (not carried over from
    pretraining) but persists across all outer iterations.

    ``on_outer_end(state, outer)`` fires after each completed outer iteration
    (checkpoint writers hook in here). On a non-finite loss or a diverged
    simulation the current policies are checkpointed under ``checkpoint_dir``
    (when given) and the error propagates.
    """
    data_start = np.asarray(data_start, dtype=np.float64)
    data_end = np.asarray(data_end, dtype=np.float64)
    grid = make_grid(state.sde.horizon, config.n_steps)
    state.opt_backward = AdamState.create(
        state.net_backward, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        eps=config.adam_eps, ema_decay=config.ema_decay,
    )
    state.opt_forward = AdamState.create(
        state.net_forward, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
        eps=config.adam_eps, ema_decay=config.ema_decay,
    )
    cache_f = None
    cache_b = None
    try:
        for outer in range(1, config.outer_iters + 1):
            for j in range(1, config.inner_iters + 1):
                if (j - 1) % config.cache_every == 0:
                    pick = np.random.default_rng(
                        derive_seed(config.seed, _TAG_SIM_FORWARD, outer, j, _SUB_INDICES)
                    ).integers(0, data_start.shape[0], size=config.n_cache_paths)
                    policy = None if config.pin_forward_zero else state.net_forward
                    cache_f = euler_forward(
                        state.sol, policy, data_start[pick], grid,
                        derive_seed(config.seed, _TAG_SIM_FORWARD, outer, j, _SUB_NOISE),
                    )
                    state.sim_counts["forward"] += 1
                rng = np.random.default_rng(
                    derive_seed(config.seed, _TAG_PAIRS_BACKWARD, outer, j)
                )
                t_rows, x_rows, weights = _cache_rows(config, grid, cache_f.states, rng)
                loss, grads = weighted_loss_and_grad(
                    state.net_backward, state.net_forward, state.sde,
                    t_rows, x_rows, weights,
                )
                adam_step(state.net_backward, grads, state.opt_backward)
                ema_update(state.opt_backward, state.net_backward)
                state.history.append(
                    {"phase": "backward", "outer": outer, "inner": j, "loss": loss}
                )
            if config.pin_forward_zero:
                if on_outer_end is not None:
                    on_outer_end(state, outer)
                continue
            for j in range(1, config.inner_iters + 1):
                if (j - 1) % config.cache_every == 0:
                    pick = np.random.default_rng(
                        derive_seed(config.seed, _TAG_SIM_BACKWARD, outer, j, _SUB_INDICES)
                    ).integers(0, data_end.shape[0], size=config.n_cache_paths)
                    cache_b = euler_backward(
                        state.sol, state.net_backward, data_end[pick], grid,
                        derive_seed(config.seed, _TAG_SIM_BACKWARD, outer, j, _SUB_NOISE),
                    )
                    state.sim_counts["backward"] += 1
                rng = np.random.default_rng(
                    derive_seed(config.seed, _TAG_PAIRS_FORWARD, outer, j)
                )
                t_rows, x_rows, weights = _cache_rows(config, grid, cache_b.states, rng)
                loss, grads = weighted_loss_and_grad(
                    state.net_forward, state.net_backward, state.sde,
                    t_rows, x_rows, weights,
                )
                adam_step(state.net_forward, grads, state.opt_forward)
                ema_update(state.opt_forward, state.net_forward)
                state.history.append(
                    {"phase": "forward", "outer": outer, "inner": j, "loss": loss}
                )
            if on_outer_end is not None:
                on_outer_end(state, outer)
    except (NonFiniteLoss, DivergedSimulation):
        if checkpoint_dir is not None:
            _save_abort_checkpoints(checkpoint_dir, state)
        raise
    return state


def generate(
    state: RunState,
    source_points: np.ndarray,
    direction: str,
    seed: int,
    n_steps: int | None = None,
    use_ema: bool = True,
):
    """Push source points through the learned dynamics; returns (samples, traj).

    ``direction`` "forward" integrates start-side points to the horizon under
    drift + g * forward policy; "backward" integrates end-side points to time
    zero under drift - g * backward policy. Sampling uses the averaged (EMA)
    policy by default.
    """
    if direction not in ("forward", "backward"):
        raise InvalidParams(f"direction must be 'forward' or 'backward', got {direction!r}")
    source_points = np.asarray(source_points, dtype=np.float64)
    grid = make_grid(state.sde.horizon, n_steps or state.config.n_steps)
    run_seed = derive_seed(seed, _TAG_GENERATE)
    if direction == "forward":
        if state.config.pin_forward_zero:
            policy = None
        else:
            net = state.net_forward
            policy = ema_policy(net, state.opt_forward) if use_ema else net
        traj = euler_forward(state.sol, policy, source_points, grid, run_seed)
        return traj.states[:, -1, :], traj
    net = state.net_backward
    policy = ema_policy(net, state.opt_backward) if use_ema else net
    traj = euler_backward(state.sol, policy, source_points, grid, run_seed)
    return traj.states[:, 0, :], traj


def save_state(directory, state: RunState) -> None:
    """Checkpoint both policies (with optimizer and EMA state) to a directory."""
    os.makedirs(directory, exist_ok=True)
    meta = {"config_digest": state.config.digest(), "sim_counts": dict(state.sim_counts)}
    save_checkpoint(
        os.path.join(directory, "forward.gsbp"),
        state.net_forward, state.opt_forward, state.config.seed,
        meta={**meta, "role": "forward"},
    )
    save_checkpoint(
        os.path.join(directory, "backward.gsbp"),
        state.net_backward, state.opt_backward, state.config.seed,
        meta={**meta, "role": "backward"},
    )


def load_state(
    directory,
    config: TrainConfig,
    data_start: np.ndarray,
    data_end: np.ndarray,
    sde: LinearSde | None = None,
    strict: bool = True,
) -> RunState:
    """Rebuild a RunState from checkpoints plus the data that defined the bridge.

    With ``strict`` the stored config digest must match ``config``; pass
    ``strict=False`` to adopt checkpoints trained under different settings.
    """
    sde = sde or config.build_sde()
    sol = _build_solution(config, sde, data_start, data_end)
    net_f, opt_f, _, meta_f = load_checkpoint(os.path.join(directory, "forward.gsbp"))
    net_b, opt_b, _, meta_b = load_checkpoint(os.path.join(directory, "backward.gsbp"))
    if strict:
        for meta in (meta_f, meta_b):
            stored = meta.get("config_digest")
            if stored is not None and stored != config.digest():
                raise ConfigError(
                    "checkpoint was produced under a different config "
                    f"(digest {stored} != {config.digest()}); "
                    "pass strict=False to load anyway"
                )
    if net_f.dim != sol.dim or net_b.dim != sol.dim:
        raise ConfigError(
            f"checkpoint dimension {net_f.dim} does not match data dimension {sol.dim}"
        )
    counts = meta_f.get("sim_counts", {"forward": 0, "backward": 0})
    return RunState(
        config=config, sde=sde, sol=sol,
        net_forward=net_f, net_backward=net_b,
        opt_forward=opt_f, opt_backward=opt_b,
        history=[], sim_counts=dict(counts),
    )
