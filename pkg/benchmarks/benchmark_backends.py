"""Benchmark the compiled (numba) kernel backend against the pure-numpy twin.

Times the three fused kernels behind the pipeline hot path: counter-based
normal generation, affine Euler integration, and log-domain Sinkhorn sweeps.
Run from the repository root:

    python3 benchmarks/benchmark_backends.py [--quick]

The first numba call per kernel pays JIT compilation; a warmup pass keeps
that out of the timings.
"""

import argparse
import time

import numpy as np

from gaussbridge import kernels


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_cases(quick: bool):
    rng = np.random.default_rng(0)
    if quick:
        n_paths, n_nodes, dim = 512, 50, 2
        n_atoms = 200
    else:
        n_paths, n_nodes, dim = 4096, 100, 2
        n_atoms = 1000

    A = np.tile(-0.3 * np.eye(dim), (n_nodes, 1, 1))
    b = np.zeros((n_nodes, dim))
    g = np.full(n_nodes, 0.7)
    x0 = rng.normal(size=(n_paths, dim))
    noise = rng.normal(size=(n_paths, n_nodes - 1, dim))

    cost = kernels.normals(1, n_atoms, 1, 2)[:, 0, :]
    C = np.sum((cost[:, None, :] - cost[None, :, :]) ** 2, axis=2)
    log_w = np.full(n_atoms, -np.log(n_atoms))

    return {
        "normals": (
            f"normals {n_paths}x{n_nodes}x{dim}",
            lambda: kernels.normals(7, n_paths, n_nodes, dim),
        ),
        "euler": (
            f"euler_affine {n_paths} paths, {n_nodes} nodes",
            lambda: kernels.euler_affine(x0, A, b, g, 0.01, noise),
        ),
        "sinkhorn": (
            f"sinkhorn_log {n_atoms}x{n_atoms}",
            lambda: kernels.sinkhorn_log(C, log_w, log_w, 0.5, max_iters=200),
        ),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats (best-of)")
    args = parser.parse_args()

    cases = make_cases(args.quick)
    backends = ["numpy"]
    if kernels.HAS_NUMBA:
        backends.append("numba")
    else:
        print("numba not importable; timing the numpy backend only")

    results: dict[str, dict[str, float]] = {name: {} for name in cases}
    for backend in backends:
        kernels.set_backend(backend)
        for name, (_, fn) in cases.items():
            fn()  # warmup (JIT compile on numba, cache touch on numpy)
            results[name][backend] = best_of(fn, args.repeats)

    width = max(len(label) for label, _ in cases.values())
    header = f"{'kernel':<{width}}  {'numpy':>10}"
    if "numba" in backends:
        header += f"  {'numba':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, (label, _) in cases.items():
        numpy_t = results[name]["numpy"]
        line = f"{label:<{width}}  {numpy_t * 1e3:>8.2f}ms"
        if "numba" in backends:
            numba_t = results[name]["numba"]
            line += f"  {numba_t * 1e3:>8.2f}ms  {numpy_t / numba_t:>7.2f}x"
        print(line)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
