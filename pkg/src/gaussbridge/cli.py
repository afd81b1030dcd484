"""Command-line front end.

Subcommands: solve, make-data, pretrain, train, generate, eval, validate.
Configuration is a single JSON file (validated strictly: unknown keys are
rejected) plus dotted-path ``--override`` flags. Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 I/O trouble (including a held
output lock). Errors print one structured JSON object to stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import platform
import sys

import numpy as np

from . import __version__, bridge, kernels
from .datasets import (
    DATASET_NAMES,
    make_dataset,
    read_points_csv,
    shared_standardize,
    write_points_csv,
)
from .errors import (
    ConfigError,
    GsbError,
    InvalidParams,
    OutputLocked,
)
from .gaussian import Gaussian, as_psd
from .metrics import SinkhornConfig, estimate_moments, sinkhorn_weps
from .sde import PRESET_NAMES
from .simulate import make_grid
from .training import (
    RunState,
    TrainConfig,
    generate,
    init_state,
    load_state,
    pretrain,
    save_state,
    train_alternating,
)

LOCK_NAME = ".lock"

# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_SIDE_DEFAULTS = {"dataset": None, "csv": None, "n": 2000, "noise": 0.05, "seed": 1}

_DEFAULT_CONFIG = {
    "config_version": 1,
    "seed": 0,
    "data": {
        "start": {**_SIDE_DEFAULTS, "dataset": "spiral", "seed": 1},
        "end": {**_SIDE_DEFAULTS, "dataset": "moons", "seed": 2},
        "normalize": False,
    },
    "sde": {"name": "vesde", "horizon": 1.0, "params": {}},
    "net": {"hidden": [128, 128, 128, 128]},
    "train": {
        "pretrain_iters_backward": 1000,
        "pretrain_iters_forward": 1000,
        "outer_iters": 20,
        "inner_iters": 500,
        "cache_every": 100,
        "batch_size": 256,
        "n_cache_paths": 512,
        "n_steps": 100,
        "lr": 2e-4,
        "beta1": 0.5,
        "beta2": 0.9,
        "adam_eps": 1e-8,
        "ema_decay": 0.99,
        "shrinkage": 1e-3,
        "pin_forward_zero": False,
        "cold_start": False,
    },
    "eval": {"epsilon": None, "max_iters": 2000, "tol": 1e-8, "n_points": 2000, "n_steps": 200},
    "solve": {"n_grid": 21},
    "output": {"dir": "gsb_run", "save_trajectories": False},
    "gaussians": None,
}

_NUMERIC = (int, float)


def _expect(cond: bool, where: str, msg: str):
    if not cond:
        raise ConfigError(f"config.{where}: {msg}")


def _check_keys(section: dict, allowed, where: str):
    _expect(isinstance(section, dict), where, f"must be an object, got {type(section).__name__}")
    unknown = set(section) - set(allowed)
    _expect(not unknown, where, f"unknown keys {sorted(unknown)}")


def _merged(defaults: dict, given: dict, where: str) -> dict:
    _check_keys(given, defaults.keys(), where)
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def _validate_side(side: dict, default_side: dict, where: str) -> dict:
    _check_keys(side, _SIDE_DEFAULTS.keys(), where)
    explicit_csv = side.get("csv") is not None
    explicit_ds = side.get("dataset") is not None
    _expect(not (explicit_csv and explicit_ds), where,
            "set exactly one of 'csv' or 'dataset'")
    # point overrides keep the default source; an explicit source displaces it
    merged = {**default_side, **side}
    if explicit_csv:
        merged["dataset"] = None
    elif explicit_ds:
        merged["csv"] = None
    side = _merged(_SIDE_DEFAULTS, merged, where)
    has_csv = side["csv"] is not None
    has_ds = side["dataset"] is not None
    _expect(has_csv != has_ds, where, "set exactly one of 'csv' or 'dataset'")
    if has_ds:
        _expect(side["dataset"] in DATASET_NAMES, where,
                f"dataset must be one of {DATASET_NAMES}, got {side['dataset']!r}")
        _expect(isinstance(side["n"], int) and side["n"] >= 2, where, "n must be an int >= 2")
        _expect(isinstance(side["noise"], _NUMERIC) and side["noise"] >= 0, where,
                "noise must be a number >= 0")
        _expect(isinstance(side["seed"], int), where, "seed must be an int")
    else:
        _expect(isinstance(side["csv"], str) and side["csv"], where, "csv must be a path")
    return side


def _validate_gaussians(section, where: str):
    if section is None:
        return None
    allowed = ("mean_start", "cov_start", "mean_end", "cov_end")
    _check_keys(section, allowed, where)
    _expect(all(k in section for k in allowed), where, f"all of {allowed} are required")
    return section


def validate_config(raw: dict) -> dict:
    """Strictly validate a raw config dict, filling defaults. Raises ConfigError."""
    _check_keys(raw, _DEFAULT_CONFIG.keys(), "<root>")
    version = raw.get("config_version", 1)
    _expect(version == 1, "config_version", f"unsupported version {version!r}")
    cfg = {"config_version": 1}

    seed = raw.get("seed", 0)
    _expect(isinstance(seed, int) and 0 <= seed < 2**64, "seed", "must be an int in [0, 2^64)")
    cfg["seed"] = seed

    data = _merged(_DEFAULT_CONFIG["data"], raw.get("data", {}), "data")
    data["start"] = _validate_side(data["start"], _DEFAULT_CONFIG["data"]["start"], "data.start")
    data["end"] = _validate_side(data["end"], _DEFAULT_CONFIG["data"]["end"], "data.end")
    _expect(isinstance(data["normalize"], bool), "data.normalize", "must be a bool")
    cfg["data"] = data

    sde = _merged(_DEFAULT_CONFIG["sde"], raw.get("sde", {}), "sde")
    _expect(sde["name"] in PRESET_NAMES, "sde.name",
            f"must be one of {PRESET_NAMES}, got {sde['name']!r}")
    _expect(isinstance(sde["horizon"], _NUMERIC) and sde["horizon"] > 0,
            "sde.horizon", "must be a positive number")
    _expect(isinstance(sde["params"], dict), "sde.params", "must be an object")
    for k, v in sde["params"].items():
        _expect(isinstance(v, _NUMERIC), f"sde.params.{k}", "must be a number")
    cfg["sde"] = sde

    net = _merged(_DEFAULT_CONFIG["net"], raw.get("net", {}), "net")
    hidden = net["hidden"]
    _expect(isinstance(hidden, list) and hidden
            and all(isinstance(h, int) and h >= 1 for h in hidden),
            "net.hidden", "must be a non-empty list of positive ints")
    cfg["net"] = net

    train = _merged(_DEFAULT_CONFIG["train"], raw.get("train", {}), "train")
    cfg["train"] = train

    ev = _merged(_DEFAULT_CONFIG["eval"], raw.get("eval", {}), "eval")
    if ev["epsilon"] is not None:
        _expect(isinstance(ev["epsilon"], _NUMERIC) and ev["epsilon"] > 0,
                "eval.epsilon", "must be null or a positive number")
    _expect(isinstance(ev["max_iters"], int) and ev["max_iters"] >= 1,
            "eval.max_iters", "must be an int >= 1")
    _expect(isinstance(ev["tol"], _NUMERIC) and ev["tol"] > 0, "eval.tol", "must be positive")
    _expect(isinstance(ev["n_points"], int) and ev["n_points"] >= 1,
            "eval.n_points", "must be an int >= 1")
    _expect(isinstance(ev["n_steps"], int) and ev["n_steps"] >= 2,
            "eval.n_steps", "must be an int >= 2")
    cfg["eval"] = ev

    sv = _merged(_DEFAULT_CONFIG["solve"], raw.get("solve", {}), "solve")
    _expect(isinstance(sv["n_grid"], int) and sv["n_grid"] >= 3,
            "solve.n_grid", "must be an int >= 3")
    cfg["solve"] = sv

    output = _merged(_DEFAULT_CONFIG["output"], raw.get("output", {}), "output")
    _expect(isinstance(output["dir"], str) and output["dir"], "output.dir", "must be a path")
    _expect(isinstance(output["save_trajectories"], bool),
            "output.save_trajectories", "must be a bool")
    cfg["output"] = output

    cfg["gaussians"] = _validate_gaussians(raw.get("gaussians"), "gaussians")
    # TrainConfig re-validates the numeric training fields with real ranges.
    _train_config(cfg)
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            sde_name=cfg["sde"]["name"],
            sde_params=dict(cfg["sde"]["params"]),
            horizon=float(cfg["sde"]["horizon"]),
            hidden=tuple(cfg["net"]["hidden"]),
            seed=cfg["seed"],
            **cfg["train"],
        )
    except TypeError as exc:
        raise ConfigError(f"config.train: {exc}") from exc


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply --override dotted.path=value pairs; values parse as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = [p for p in path.split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r} has an empty path")
        for part in parts[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = {}
                node[part] = nxt
            if not isinstance(nxt, dict):
                raise ConfigError(f"override path {path!r} crosses non-object {part!r}")
            node = nxt
        node[parts[-1]] = value
    return out


def load_config(path, overrides, out_flag=None, seed_flag=None) -> dict:
    if path is None:
        raw = {}
    else:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    raw = apply_overrides(raw, overrides)
    if seed_flag is not None:
        raw["seed"] = seed_flag
    if out_flag is not None:
        raw.setdefault("output", {})
        raw["output"]["dir"] = out_flag
    return validate_config(raw)


# ---------------------------------------------------------------------------
# Output directory, manifests
# ---------------------------------------------------------------------------


class OutputDir:
    """Output directory with an exclusive lock file held for the run."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)
        self._lock = os.path.join(path, LOCK_NAME)
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLocked(
                f"{path}: lock file {LOCK_NAME} exists; another run may be active "
                "(delete it if that run is dead)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()) + "\n")
        self.artifacts: list[str] = []

    def file(self, *parts) -> str:
        full = os.path.join(self.path, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        rel = os.path.relpath(full, self.path)
        if rel not in self.artifacts:
            self.artifacts.append(rel)
        return full

    def subdir(self, *parts) -> str:
        full = os.path.join(self.path, *parts)
        os.makedirs(full, exist_ok=True)
        return full

    def release(self):
        try:
            os.unlink(self._lock)
        except FileNotFoundError:
            pass


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _tree_files(root: str):
    for base, _, names in os.walk(root):
        for name in names:
            yield os.path.join(base, name)


def write_manifest(out: OutputDir, command: str, cfg: dict, metrics: dict | None = None):
    """Record config echo, versions, backend, and artifact hashes.

    Deliberately excludes wall-clock timestamps so identical runs produce
    byte-identical manifests.
    """
    try:
        import numba
        numba_version = numba.__version__
    except ImportError:
        numba_version = None
    hashes = {}
    for full in sorted(_tree_files(out.path)):
        rel = os.path.relpath(full, out.path)
        if rel in (LOCK_NAME, "manifest.json"):
            continue
        hashes[rel] = _sha256(full)
    manifest = {
        "command": command,
        "config": cfg,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "numba": numba_version,
        },
        "backend": kernels.backend_name(),
        "artifacts": hashes,
        "metrics": metrics or {},
    }
    path = os.path.join(out.path, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Data and problem assembly
# ---------------------------------------------------------------------------


def _load_side(side: dict, base_dir: str) -> np.ndarray:
    if side["csv"] is not None:
        path = side["csv"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return read_points_csv(path)
    return make_dataset(side["dataset"], side["n"], noise=side["noise"], seed=side["seed"])


def _load_pair(cfg: dict, base_dir: str):
    """Both point clouds plus the affine map back to raw coordinates."""
    a = _load_side(cfg["data"]["start"], base_dir)
    b = _load_side(cfg["data"]["end"], base_dir)
    if a.shape[1] != b.shape[1]:
        raise ConfigError(
            f"data sides disagree in dimension: {a.shape[1]} vs {b.shape[1]}"
        )
    if cfg["data"]["normalize"]:
        a, b, transform = shared_standardize(a, b)
    else:
        transform = {"center": np.zeros(a.shape[1]), "scale": 1.0}
    return a, b, transform


def _explicit_gaussians(section: dict):
    try:
        start = Gaussian(np.asarray(section["mean_start"], dtype=float),
                         as_psd(np.asarray(section["cov_start"], dtype=float)))
        end = Gaussian(np.asarray(section["mean_end"], dtype=float),
                       as_psd(np.asarray(section["cov_end"], dtype=float)))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config.gaussians: {exc}") from exc
    return start, end


def _solution_for(cfg: dict, base_dir: str):
    from .bridge import GsbProblem, solve

    tc = _train_config(cfg)
    sde = tc.build_sde()
    if cfg["gaussians"] is not None:
        start, end = _explicit_gaussians(cfg["gaussians"])
    else:
        a, b, _ = _load_pair(cfg, base_dir)
        start = estimate_moments(a, shrinkage=tc.shrinkage)
        end = estimate_moments(b, shrinkage=tc.shrinkage)
    return solve(GsbProblem(sde=sde, start=start, end=end))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_make_data(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    out = OutputDir(cfg["output"]["dir"])
    try:
        base = os.path.dirname(args.config) if args.config else "."
        a, b, _ = _load_pair(cfg, base)
        write_points_csv(out.file("start.csv"), a)
        write_points_csv(out.file("end.csv"), b)
        write_manifest(out, "make-data", cfg,
                       {"n_start": int(a.shape[0]), "n_end": int(b.shape[0])})
    finally:
        out.release()
    print(f"wrote {out.path}/start.csv and {out.path}/end.csv")
    return 0


def _write_marginals_csv(path: str, sol, times) -> None:
    d = sol.dim
    header = ["t"] + [f"mean_{i}" for i in range(d)] + [
        f"cov_{i}_{j}" for i in range(d) for j in range(d)
    ]
    rows = []
    for t in times:
        g = bridge.marginal(sol, float(t))
        rows.append([t, *g.mean.tolist(), *g.cov.entries.reshape(-1).tolist()])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_drift_csv(path: str, sol, times) -> None:
    d = sol.dim
    header = ["t"] + [f"a_{i}_{j}" for i in range(d) for j in range(d)] + [
        f"b_{i}" for i in range(d)
    ]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for t in times:
            A, b = bridge.drift_matrix(sol, float(t))
            row = [t, *A.reshape(-1).tolist(), *b.tolist()]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_solve(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    base = os.path.dirname(args.config) if args.config else "."
    sol = _solution_for(cfg, base)
    report = bridge.validate(sol)
    if args.check:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return 0 if report.passed else 3
    out = OutputDir(cfg["output"]["dir"])
    try:
        n_grid = cfg["solve"]["n_grid"]
        horizon = sol.sde.horizon
        _write_marginals_csv(out.file("marginals.csv"), sol,
                             np.linspace(0.0, horizon, n_grid))
        _write_drift_csv(out.file("drift.csv"), sol,
                         make_grid(horizon, n_grid - 1).times)
        _write_json(out.file("validation.json"), report.to_dict())
        with open(out.file("validation.txt"), "w") as fh:
            fh.write(report.format_text() + "\n")
        summary = {
            "effective_sigma": sol.sigma,
            "validation_passed": report.passed,
        }
        write_manifest(out, "solve", cfg, summary)
    finally:
        out.release()
    print(report.format_text())
    return 0 if report.passed else 3


def cmd_validate(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    base = os.path.dirname(args.config) if args.config else "."
    sol = _solution_for(cfg, base)
    report = bridge.validate(sol)
    print(report.format_text())
    return 0 if report.passed else 3


def _write_history_csv(path: str, history) -> None:
    with open(path, "w") as fh:
        fh.write("iter,phase,loss\n")
        for i, row in enumerate(history):
            fh.write(f"{i},{row['phase']},{row['loss']!r}\n")


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    tc = _train_config(cfg)
    base = os.path.dirname(args.config) if args.config else "."
    a, b, _ = _load_pair(cfg, base)
    out = OutputDir(cfg["output"]["dir"])
    try:
        state = pretrain(tc, a, b)
        save_state(out.subdir("checkpoints", "pretrain"), state)
        _write_history_csv(out.file("pretrain_history.csv"), state.history)
        last = state.history[-1]["loss"] if state.history else None
        write_manifest(out, "pretrain", cfg, {"final_loss": last})
    finally:
        out.release()
    print(f"pretrained policies saved under {out.path}/checkpoints/pretrain")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    tc = _train_config(cfg)
    base = os.path.dirname(args.config) if args.config else "."
    a, b, _ = _load_pair(cfg, base)
    out = OutputDir(cfg["output"]["dir"])
    try:
        pre_dir = os.path.join(out.path, "checkpoints", "pretrain")
        if tc.cold_start:
            state = init_state(tc, a, b)
        elif os.path.exists(os.path.join(pre_dir, "forward.gsbp")):
            state = load_state(pre_dir, tc, a, b)
        else:
            state = pretrain(tc, a, b)
            save_state(out.subdir("checkpoints", "pretrain"), state)

        def checkpoint_outer(st: RunState, outer: int):
            save_state(out.subdir("checkpoints", f"outer_{outer:04d}"), st)

        state = train_alternating(
            tc, a, b, state,
            checkpoint_dir=out.subdir("checkpoints"),
            on_outer_end=checkpoint_outer,
        )
        save_state(out.subdir("checkpoints", "final"), state)
        _write_history_csv(out.file("loss_history.csv"), state.history)
        losses = [row["loss"] for row in state.history] or [None]
        write_manifest(out, "train", cfg, {
            "final_loss": losses[-1],
            "sim_counts": state.sim_counts,
        })
    finally:
        out.release()
    print(f"trained policies saved under {out.path}/checkpoints/final")
    return 0


def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    tc = _train_config(cfg)
    base = os.path.dirname(args.config) if args.config else "."
    a, b, transform = _load_pair(cfg, base)
    out = OutputDir(cfg["output"]["dir"])
    try:
        ckpt = args.checkpoints or os.path.join(out.path, "checkpoints", "final")
        state = load_state(ckpt, tc, a, b)
        source = a if args.direction == "forward" else b
        n = min(cfg["eval"]["n_points"], source.shape[0])
        samples, traj = generate(
            state, source[:n], args.direction, seed=cfg["seed"],
            n_steps=cfg["eval"]["n_steps"],
        )
        raw = samples * transform["scale"] + transform["center"]
        name = f"generated_{args.direction}.csv"
        write_points_csv(out.file(name), raw)
        if cfg["output"]["save_trajectories"]:
            traj.save(out.file(f"trajectory_{args.direction}.gsbt"))
        write_manifest(out, "generate", cfg, {
            "direction": args.direction, "n_samples": int(raw.shape[0]),
        })
    finally:
        out.release()
    print(f"wrote {out.path}/{name}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.override, args.out, args.seed)
    x = read_points_csv(args.generated)
    y = read_points_csv(args.reference)
    ev = cfg["eval"]
    res = sinkhorn_weps(x, y, SinkhornConfig(
        epsilon=ev["epsilon"], max_iters=ev["max_iters"], tol=ev["tol"],
    ))
    payload = res.to_dict()
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out is not None:
        out = OutputDir(cfg["output"]["dir"])
        try:
            _write_json(out.file("metrics.json"), payload)
            write_manifest(out, "eval", cfg, payload)
        finally:
            out.release()
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, config_required: bool = False):
    p.add_argument("--config", required=config_required, default=None,
                   help="path to a JSON config file (defaults apply when omitted)")
    p.add_argument("--out", default=None,
                   help="output directory (overrides output.dir in the config)")
    p.add_argument("--seed", type=int, default=None,
                   help="root seed (overrides seed in the config)")
    p.add_argument("--override", action="append", metavar="PATH=VALUE",
                   help="dotted-path config override, e.g. train.lr=1e-4; "
                        "values parse as JSON, falling back to strings")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaussbridge",
        description="Closed-form Gaussian bridge solver with learned "
                    "forward/backward refinement policies.",
        epilog="Environment: GSB_NUMBA=1 requires the compiled backend, "
               "GSB_NUMBA=0 forces pure numpy; GSB_THREADS caps compiled "
               "backend threads.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the Gaussian bridge and validate it",
                       description="Solve the closed-form bridge for the configured "
                                   "endpoint Gaussians (explicit or fitted from data), "
                                   "write marginal/drift tables, and run self-validation. "
                                   "Exit code 0 only when validation passes.")
    _add_common(p)
    p.add_argument("--check", action="store_true",
                   help="print the validation report as JSON and write nothing")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("make-data", help="write the configured point clouds to CSV",
                       description="Generate (or copy) both endpoint point clouds "
                                   "into the output directory as start.csv/end.csv.")
    _add_common(p)
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("pretrain", help="pretrain both policies on exact bridge draws",
                       description="Warm up the backward then forward policy on exact "
                                   "conditional draws; writes checkpoints and a loss "
                                   "history.")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="run alternating refinement training",
                       description="Alternating refinement on cached simulated "
                                   "trajectories. Reuses checkpoints/pretrain under the "
                                   "output directory when present, otherwise pretrains "
                                   "first (unless train.cold_start).")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="push data through the learned dynamics",
                       description="Integrate source points through the learned SDE "
                                   "and write endpoint samples to CSV.")
    _add_common(p)
    p.add_argument("--direction", choices=("forward", "backward"), required=True,
                   help="forward: start side to horizon; backward: end side to time zero")
    p.add_argument("--checkpoints", default=None,
                   help="checkpoint directory (default: <out>/checkpoints/final)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="entropic transport distance between two CSVs",
                       description="Compute the entropy-regularized transport cost "
                                   "between two point-cloud CSVs and print it as JSON.")
    _add_common(p)
    p.add_argument("--generated", required=True, help="CSV of generated samples")
    p.add_argument("--reference", required=True, help="CSV of reference samples")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="run bridge self-validation and print the report",
                       description="Build the configured bridge and print the "
                                   "self-validation report; exit 0 only on pass.")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def _exit_code(err: Exception) -> int:
    if isinstance(err, InvalidParams):
        return 2
    if isinstance(err, OutputLocked):
        return 4
    if isinstance(err, GsbError):
        return 3
    if isinstance(err, OSError):
        return 4
    return 3


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GsbError, OSError) as err:
        code = _exit_code(err)
        payload = {"error": type(err).__name__, "message": str(err), "exit_code": code}
        print(json.dumps(payload), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
