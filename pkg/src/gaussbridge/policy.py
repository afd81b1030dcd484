"""Policy networks and their losses.

A policy is a small MLP mapping (time features, state) to a correction field.
Everything is plain numpy: forward pass, exact divergence via one forward-mode
tangent sweep per coordinate, and an analytic reverse pass that also
differentiates the divergence term (which needs the activation's second
derivative). Adam with EMA shadows and a small binary checkpoint format round
out the training plumbing.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    DimensionTooLarge,
    InvalidParams,
    NonFiniteLoss,
)
from .sde import LinearSde

__all__ = [
    "N_TIME_FEATURES",
    "MAX_DIVERGENCE_DIM",
    "time_features",
    "PolicyNetwork",
    "divergence",
    "weighted_loss_and_grad",
    "loss_and_grad_backward",
    "loss_and_grad_forward",
    "AdamState",
    "adam_step",
    "ema_update",
    "ema_policy",
    "save_checkpoint",
    "load_checkpoint",
]

N_TIME_FEATURES = 4
MAX_DIVERGENCE_DIM = 64
CHECKPOINT_MAGIC = b"GSBP"
CHECKPOINT_VERSION = 1


def time_features(t, horizon: float) -> np.ndarray:
    """Features (s, sin 2*pi*s, cos 2*pi*s, sqrt s) of normalized time s = t/T.

    ``t`` may be a scalar or an array of shape (n,); the result has shape
    (n, 4) (scalars behave as n = 1).
    """
    s = np.atleast_1d(np.asarray(t, dtype=np.float64)) / float(horizon)
    two_pi = 2.0 * np.pi
    return np.stack(
        [s, np.sin(two_pi * s), np.cos(two_pi * s), np.sqrt(np.maximum(s, 0.0))],
        axis=1,
    )


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # tanh identity: stable for any magnitude, one vectorized pass
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _silu(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sig = _sigmoid(a)
    return a * sig, sig


def _silu_d1(a: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return sig * (1.0 + a * (1.0 - sig))


def _silu_d2(a: np.ndarray, sig: np.ndarray) -> np.ndarray:
    return sig * (1.0 - sig) * (2.0 + a * (1.0 - 2.0 * sig))


class PolicyNetwork:
    """MLP policy: input (state, time features), output a field value per state.

    Hidden layers use the SiLU activation; the output layer is linear. With
    ``zero_final`` the last layer starts at zero, so a fresh policy is exactly
    the zero field regardless of the hidden weights.
    """

    def __init__(self, dim: int, horizon: float, weights, biases, hidden):
        self.dim = int(dim)
        self.horizon = float(horizon)
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.hidden = tuple(int(h) for h in hidden)
        self.train_steps = 0
        widths = [self.dim + N_TIME_FEATURES, *self.hidden, self.dim]
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[idx], widths[idx + 1]) or b.shape != (widths[idx + 1],):
                raise DimensionMismatch(
                    f"layer {idx}: expected {(widths[idx], widths[idx + 1])}, got {w.shape}"
                )

    @classmethod
    def create(
        cls,
        dim: int,
        horizon: float,
        hidden=(128, 128, 128, 128),
        seed: int = 0,
        zero_final: bool = True,
    ) -> "PolicyNetwork":
        if dim < 1:
            raise InvalidParams(f"dim must be >= 1, got {dim}")
        rng = np.random.default_rng(seed)
        widths = [dim + N_TIME_FEATURES, *hidden, dim]
        weights, biases = [], []
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            last = i == len(widths) - 2
            if last and zero_final:
                w = np.zeros((fan_in, fan_out))
            else:
                w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(dim, horizon, weights, biases, hidden)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self):
        """Flat list of parameter arrays, weights and biases interleaved."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "PolicyNetwork":
        net = PolicyNetwork(
            self.dim,
            self.horizon,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden,
        )
        net.train_steps = self.train_steps
        return net

    def _stack_input(self, t, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatch(f"states must have shape (n, {self.dim})")
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = np.full(x.shape[0], float(t))
        if t.shape != (x.shape[0],):
            raise DimensionMismatch("times must be scalar or one per state row")
        return np.concatenate([x, time_features(t, self.horizon)], axis=1)

    def _forward(self, u: np.ndarray, keep: bool):
        """Primal pass. With ``keep`` returns per-layer caches for the reverse."""
        inputs = [u] if keep else None
        preacts = [] if keep else None
        sigmoids = [] if keep else None
        h = u
        last = self.n_layers - 1
        for idx, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w + b
            if idx == last:
                h = a
            else:
                h, sig = _silu(a)
                if keep:
                    preacts.append(a)
                    sigmoids.append(sig)
                    inputs.append(h)
        return h, (inputs, preacts, sigmoids)

    def __call__(self, t, x: np.ndarray) -> np.ndarray:
        """Field values, shape (n, dim); accepts scalar or per-row times."""
        single = np.asarray(x).ndim == 1
        out, _ = self._forward(self._stack_input(t, x), keep=False)
        return out[0] if single else out

    def _tangent(self, caches, keep: bool):
        """Forward-mode pass for all coordinate directions at once.

        The tangent batch stacks the dim directions along axis 0: arrays are
        (dim * n, width), reshaped to (dim, n, width) when broadcasting against
        primal quantities.
        """
        inputs, preacts, sigmoids = caches
        n = inputs[0].shape[0]
        d = self.dim
        p0 = d + N_TIME_FEATURES
        t_h = np.zeros((d, n, p0))
        for i in range(d):
            t_h[i, :, i] = 1.0
        t_h = t_h.reshape(d * n, p0)
        t_inputs = [t_h] if keep else None
        t_preacts = [] if keep else None
        last = self.n_layers - 1
        for idx, w in enumerate(self.weights):
            t_a = t_h @ w
            if idx == last:
                t_h = t_a
            else:
                d1 = _silu_d1(preacts[idx], sigmoids[idx])
                t_h = (np.broadcast_to(d1, (d, n, d1.shape[1])).reshape(d * n, -1)) * t_a
                if keep:
                    t_preacts.append(t_a)
                    t_inputs.append(t_h)
        return t_h, (t_inputs, t_preacts)

    def value_and_divergence(self, t, x: np.ndarray):
        """Field values and their exact state-divergence, shapes (n, d) and (n,)."""
        if self.dim > MAX_DIVERGENCE_DIM:
            raise DimensionTooLarge(
                f"exact divergence supports dim <= {MAX_DIVERGENCE_DIM}, got {self.dim}"
            )
        u = self._stack_input(t, x)
        z, caches = self._forward(u, keep=True)
        t_z, _ = self._tangent(caches, keep=False)
        n = u.shape[0]
        div = np.einsum("iji->j", t_z.reshape(self.dim, n, self.dim))
        return z, div


def divergence(net: PolicyNetwork, t, x: np.ndarray) -> np.ndarray:
    """Exact divergence of the policy field with respect to the state."""
    single = np.asarray(x).ndim == 1
    _, div = net.value_and_divergence(t, x)
    return float(div[0]) if single else div


# ---------------------------------------------------------------------------
# Loss with gradients
# ---------------------------------------------------------------------------


def weighted_loss_and_grad(
    train_net: PolicyNetwork,
    frozen_net: PolicyNetwork | None,
    sde: LinearSde,
    times: np.ndarray,
    states: np.ndarray,
    weights: np.ndarray,
    need_grad: bool = True,
):
    """Weighted sum of the policy-matching integrand over sample rows.

    Each row contributes ``w * (0.5 |Z|^2 + g(t) div Z + <F, Z>)`` where Z is
    the trained policy, F the frozen counterpart (zero when None), and g the
    reference volatility. Returns ``(loss, grads)``; ``grads`` pairs
    ``(dW, db)`` per layer of the trained net, or None when ``need_grad`` is
    false. Raises NonFiniteLoss when the value or any gradient is not finite.
    """
    if train_net.dim > MAX_DIVERGENCE_DIM:
        raise DimensionTooLarge(
            f"exact divergence supports dim <= {MAX_DIVERGENCE_DIM}, got {train_net.dim}"
        )
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = states.shape[0]
    if times.shape != (n,) or weights.shape != (n,) or states.shape != (n, train_net.dim):
        raise DimensionMismatch("loss rows disagree: need times (n,), states (n,d), weights (n,)")

    d = train_net.dim
    u = train_net._stack_input(times, states)
    z, caches = train_net._forward(u, keep=True)
    t_z, t_caches = train_net._tangent(caches, keep=need_grad)
    div = np.einsum("iji->j", t_z.reshape(d, n, d))
    frozen = np.zeros_like(z) if frozen_net is None else frozen_net(times, states)
    # sde.vol is a scalar callable; rows repeat a handful of grid nodes
    uniq, inv = np.unique(times, return_inverse=True)
    vol = np.array([sde.vol(float(t)) for t in uniq])[inv]

    integrand = 0.5 * np.sum(z * z, axis=1) + vol * div + np.sum(frozen * z, axis=1)
    loss = float(np.sum(weights * integrand))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is not finite: {loss}")
    if not need_grad:
        return loss, None

    inputs, preacts, sigmoids = caches
    t_inputs, t_preacts = t_caches
    g_act = weights[:, None] * (z + frozen)  # upstream on the primal output
    c = weights * vol  # upstream on the divergence
    g_tact = np.zeros((d, n, d))
    for i in range(d):
        g_tact[i, :, i] = c
    g_tact = g_tact.reshape(d * n, d)

    grads_w = [None] * train_net.n_layers
    grads_b = [None] * train_net.n_layers
    for idx in range(train_net.n_layers - 1, -1, -1):
        grads_w[idx] = inputs[idx].T @ g_act + t_inputs[idx].T @ g_tact
        grads_b[idx] = g_act.sum(axis=0)
        if idx == 0:
            break
        w = train_net.weights[idx]
        g_h = g_act @ w.T
        g_th = g_tact @ w.T
        a_prev = preacts[idx - 1]
        sig_prev = sigmoids[idx - 1]
        d1 = _silu_d1(a_prev, sig_prev)
        d2 = _silu_d2(a_prev, sig_prev)
        width = a_prev.shape[1]
        t_a_prev = t_preacts[idx - 1].reshape(d, n, width)
        g_th3 = g_th.reshape(d, n, width)
        g_act = d1 * g_h + d2 * np.sum(t_a_prev * g_th3, axis=0)
        g_tact = (np.broadcast_to(d1, (d, n, width)).reshape(d * n, width)) * g_th

    grads = list(zip(grads_w, grads_b))
    for dw, db in grads:
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NonFiniteLoss("gradient is not finite")
    return loss, grads


def _grid_rows(traj, expected_direction: str):
    if traj.direction != expected_direction:
        raise InvalidParams(
            f"this loss integrates {expected_direction} trajectories, got "
            f"{traj.direction!r}"
        )
    times_grid = traj.grid.times
    n_paths, n_nodes, d = traj.states.shape
    # Left-rule time integral over the grid: nodes 0..K-2, each weighted dt,
    # averaged over paths.
    idx = np.arange(n_nodes - 1)
    t_rows = np.repeat(times_grid[idx], n_paths)
    x_rows = traj.states[:, idx, :].transpose(1, 0, 2).reshape(-1, d)
    w_rows = np.full(t_rows.shape[0], traj.grid.dt / n_paths)
    return t_rows, x_rows, w_rows


def loss_and_grad_backward(traj, forward_net: PolicyNetwork, backward_net: PolicyNetwork,
                           sde: LinearSde, need_grad: bool = True):
    """Backward-policy loss on forward trajectories; grads for the backward net."""
    t_rows, x_rows, w_rows = _grid_rows(traj, "forward")
    return weighted_loss_and_grad(
        backward_net, forward_net, sde, t_rows, x_rows, w_rows, need_grad
    )


def loss_and_grad_forward(traj, forward_net: PolicyNetwork, backward_net: PolicyNetwork,
                          sde: LinearSde, need_grad: bool = True):
    """Forward-policy loss on backward trajectories; grads for the forward net."""
    t_rows, x_rows, w_rows = _grid_rows(traj, "backward")
    return weighted_loss_and_grad(
        forward_net, backward_net, sde, t_rows, x_rows, w_rows, need_grad
    )


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments plus EMA shadow parameters for one network."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    ema_decay: float
    step: int
    m: list
    v: list
    ema: list

    @classmethod
    def create(
        cls,
        net: PolicyNetwork,
        lr: float = 2e-4,
        beta1: float = 0.5,
        beta2: float = 0.9,
        eps: float = 1e-8,
        ema_decay: float = 0.99,
    ) -> "AdamState":
        if lr <= 0.0:
            raise InvalidParams(f"learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0 and 0.0 <= ema_decay < 1.0):
            raise InvalidParams("beta1, beta2 and ema_decay must lie in [0, 1)")
        params = net.parameters()
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            ema_decay=ema_decay,
            step=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            ema=[p.copy() for p in params],
        )


def adam_step(net: PolicyNetwork, grads, opt: AdamState) -> None:
    """One in-place Adam update from per-layer (dW, db) gradients."""
    flat = []
    for dw, db in grads:
        flat.append(dw)
        flat.append(db)
    params = net.parameters()
    if len(flat) != len(params):
        raise DimensionMismatch("gradient structure does not match the network")
    opt.step += 1
    b1c = 1.0 - opt.beta1**opt.step
    b2c = 1.0 - opt.beta2**opt.step
    for p, g, m, v in zip(params, flat, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.lr * (m / b1c) / (np.sqrt(v / b2c) + opt.eps)
    net.train_steps += 1


def ema_update(opt: AdamState, net: PolicyNetwork) -> None:
    """Fold the current parameters into the EMA shadows."""
    for shadow, p in zip(opt.ema, net.parameters()):
        shadow *= opt.ema_decay
        shadow += (1.0 - opt.ema_decay) * p


def ema_policy(net: PolicyNetwork, opt: AdamState) -> PolicyNetwork:
    """A copy of the network carrying the EMA parameters (for sampling/eval)."""
    out = net.copy()
    params = out.parameters()
    for p, shadow in zip(params, opt.ema):
        p[...] = shadow
    return out


# ---------------------------------------------------------------------------
# Checkpoints: binary GSBP file plus a JSON sidecar
# ---------------------------------------------------------------------------


def _param_blob(arrays) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def checkpoint_bytes(net: PolicyNetwork, opt: AdamState, seed: int, meta: dict | None = None) -> bytes:
    header = {
        "dim": net.dim,
        "hidden": list(net.hidden),
        "horizon": net.horizon,
        "train_steps": net.train_steps,
        "lr": opt.lr,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
        "ema_decay": opt.ema_decay,
        "opt_step": opt.step,
        "seed": int(seed),
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = _param_blob(net.parameters()) + _param_blob(opt.ema) + _param_blob(opt.m) + _param_blob(opt.v)
    return CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(head)) + head + body


def save_checkpoint(path, net: PolicyNetwork, opt: AdamState, seed: int, meta: dict | None = None) -> None:
    """Write the GSBP binary and a JSON sidecar next to it."""
    blob = checkpoint_bytes(net, opt, seed, meta)
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(blob)
    head_len = struct.unpack("<II", blob[4:12])[1]
    sidecar = json.loads(blob[12 : 12 + head_len].decode())
    sidecar["sha256"] = hashlib.sha256(blob).hexdigest()
    sidecar["format"] = {"magic": "GSBP", "version": CHECKPOINT_VERSION}
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _split_blob(buf: bytes, offset: int, shapes):
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        arrays.append(arr)
        offset += nbytes
    return arrays, offset


def load_checkpoint(path) -> tuple[PolicyNetwork, AdamState, int, dict]:
    """Read a GSBP checkpoint; returns (net, adam state, seed, meta)."""
    with open(str(path), "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise InvalidParams(f"{path}: not a GSBP checkpoint (bad magic)")
    version, head_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise InvalidParams(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12 : 12 + head_len].decode())
    dim = header["dim"]
    hidden = tuple(header["hidden"])
    widths = [dim + N_TIME_FEATURES, *hidden, dim]
    shapes = []
    for i in range(len(widths) - 1):
        shapes.append((widths[i], widths[i + 1]))
        shapes.append((widths[i + 1],))
    offset = 12 + head_len
    params, offset = _split_blob(blob, offset, shapes)
    ema, offset = _split_blob(blob, offset, shapes)
    m, offset = _split_blob(blob, offset, shapes)
    v, offset = _split_blob(blob, offset, shapes)
    if offset != len(blob):
        raise InvalidParams(f"{path}: checkpoint payload length mismatch")
    weights = params[0::2]
    biases = params[1::2]
    net = PolicyNetwork(dim, header["horizon"], weights, biases, hidden)
    net.train_steps = int(header["train_steps"])
    opt = AdamState(
        lr=header["lr"],
        beta1=header["beta1"],
        beta2=header["beta2"],
        eps=header["eps"],
        ema_decay=header["ema_decay"],
        step=int(header["opt_step"]),
        m=m,
        v=v,
        ema=ema,
    )
    return net, opt, int(header["seed"]), header.get("meta", {})
