"""Acceptance gate: ten binding criteria, one visible pass/fail line each.

Run with ``pytest -v`` (the configured ``-rA`` summary echoes every line).
Criteria 8 and 9 train the full desk-scale pipeline and carry the ``slow``
marker; everything else completes in seconds.
"""

import json
import time

import numpy as np
import pytest

import gaussbridge as gb
from gaussbridge import kernels
from gaussbridge.cli import main as cli_main
from gaussbridge.metrics import SinkhornConfig, pairwise_sq_dists, sinkhorn_weps
from gaussbridge.policy import weighted_loss_and_grad
from gaussbridge.simulate import make_grid

PRESET_ARGS = [
    ("bm", {"nu": 1.0}),
    ("vesde", {}),
    ("vpsde", {}),
    ("sub_vpsde", {}),
    ("ou", {"delta": 1.0, "shift": 0.4}),
    ("bdt", {"shift": -0.2}),
]


def _report(num: int, passed: bool, detail: str):
    line = f"[criterion {num:02d}] {'PASS' if passed else 'FAIL'}: {detail}"
    print(line)
    assert passed, line


def _rand_spd(rng, d: int, scale: float = 1.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    eig = rng.uniform(0.3, 3.0, size=d) * scale
    return q @ np.diag(eig) @ q.T


def _random_problem(rng, sde, d: int, scale: float = 1.0) -> gb.GsbProblem:
    start = gb.Gaussian(rng.normal(size=d) * scale, _rand_spd(rng, d, scale**2))
    end = gb.Gaussian(rng.normal(size=d) * scale, _rand_spd(rng, d, scale**2))
    return gb.GsbProblem(sde=sde, start=start, end=end)


def _sym_bm_solution(dim: int = 1) -> gb.GsbSolution:
    sde = gb.preset("bm", nu=1.0)
    g = gb.Gaussian(np.zeros(dim), np.eye(dim))
    return gb.solve(gb.GsbProblem(sde=sde, start=g, end=g))


def _boundary_error(sol: gb.GsbSolution) -> float:
    worst = 0.0
    for t, ref in ((0.0, sol.start), (sol.sde.horizon, sol.end)):
        got = gb.marginal(sol, t)
        worst = max(worst, float(np.abs(got.mean - ref.mean).max()))
        worst = max(worst, float(np.abs(got.cov.entries - ref.cov.entries).max()))
    return worst


def _drift_asymmetry(sol: gb.GsbSolution, n_times: int = 20) -> float:
    T = sol.sde.horizon
    worst = 0.0
    for t in np.linspace(0.02 * T, 0.98 * T, n_times):
        A, _ = gb.drift_matrix(sol, float(t))
        scale = max(float(np.abs(A).max()), 1e-30)
        worst = max(worst, float(np.abs(A - A.T).max()) / scale)
    return worst


def _cov_ode_residual(sol: gb.GsbSolution) -> float:
    """Central-difference check that the marginal covariance flows under the drift."""
    T = sol.sde.horizon
    h = 1e-6 * T
    worst = 0.0
    for t in np.linspace(0.1 * T, 0.9 * T, 7):
        t = float(t)
        up = gb.marginal(sol, t + h).cov.entries
        dn = gb.marginal(sol, t - h).cov.entries
        lhs = (up - dn) / (2.0 * h)
        A, _ = gb.drift_matrix(sol, t)
        cov = gb.marginal(sol, t).cov.entries
        g2 = sol.sde.vol(t) ** 2
        rhs = A @ cov + cov @ A.T + g2 * np.eye(sol.dim)
        scale = max(float(np.abs(rhs).max()), 1e-30)
        worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    return worst


def test_criterion_01_boundary_exactness():
    """Closed-form marginals hit both endpoint Gaussians to 1e-10 componentwise."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    dims = (1, 2, 8, 16)
    worst = 0.0
    for name, params in PRESET_ARGS:
        sde = gb.preset(name, **params)
        for rep in range(10):
            sol = gb.solve(_random_problem(rng, sde, dims[rep % 4]))
            worst = max(worst, _boundary_error(sol))
    elapsed = time.perf_counter() - t0
    _report(1, worst <= 1e-10 and elapsed < 10.0,
            f"6 presets x 10 SPD problems, max boundary error {worst:.3e} "
            f"(tol 1e-10) in {elapsed:.1f}s (budget 10s)")


def test_criterion_02_golden_scalars():
    """Unit Brownian fixture reproduces the four precomputed solver values."""
    sol = _sym_bm_solution(1)
    cross = float(sol.cross[0, 0])
    var_half = float(gb.marginal(sol, 0.5).cov.entries[0, 0])
    f_at_1 = float(gb.drift(sol, 0.5, np.array([1.0]))[0])
    b = gb.bridge_given_start(sol, 0.5, np.array([1.0]))
    checks = {
        "cross_cov": (cross, 0.6180340),
        "marginal_var_half": (var_half, 1.0590170),
        "drift_at_one": (f_at_1, -0.4721360),
        "bridge_mean": (float(b.mean[0]), 0.8090170),
        "bridge_var": (float(b.cov.entries[0, 0]), 0.4045085),
    }
    worst = max(abs(got - want) for got, want in checks.values())
    _report(2, worst <= 1e-6,
            f"five golden values, max deviation {worst:.2e} (tol 1e-6)")


def test_criterion_03_drift_symmetry():
    """The drift matrix stays symmetric across presets, times, and dimensions."""
    rng = np.random.default_rng(7)
    worst = 0.0
    for name, params in PRESET_ARGS:
        sde = gb.preset(name, **params)
        for d in (1, 2, 8, 16):
            sol = gb.solve(_random_problem(rng, sde, d))
            worst = max(worst, _drift_asymmetry(sol, n_times=20))
    _report(3, worst <= 1e-8,
            f"max relative asymmetry {worst:.3e} over 6 presets x 20 times, "
            f"d up to 16 (tol 1e-8)")


def test_criterion_04_covariance_ode():
    """Marginal covariance satisfies its evolution equation under the drift."""
    rng = np.random.default_rng(11)
    worst = 0.0
    for name, params in PRESET_ARGS:
        sde = gb.preset(name, **params)
        sol = gb.solve(_random_problem(rng, sde, 3))
        worst = max(worst, _cov_ode_residual(sol))
    _report(4, worst <= 1e-4,
            f"max relative covariance-flow residual {worst:.3e} "
            f"(tol 1e-4, h = 1e-6 T)")


def test_criterion_05_sinkhorn_oracle():
    """Discrete entropic OT on a 1-D grid recovers the closed-form cross-covariance."""
    t0 = time.perf_counter()
    sol = _sym_bm_solution(1)
    eps = sol.sigma**2
    x = np.linspace(-5.0, 5.0, 401)
    logw = -0.5 * x**2
    logw -= np.log(np.sum(np.exp(logw)))
    C = 0.5 * (x[:, None] - x[None, :]) ** 2
    u, v, iters, err, converged = kernels.sinkhorn_log(C, logw, logw, eps, max_iters=5000)
    plan = np.exp(u[:, None] + v[None, :] - C / eps)
    mx = float(plan.sum(axis=1) @ x)
    my = float(plan.sum(axis=0) @ x)
    cross = float(x @ plan @ x - mx * my)
    want = float(sol.cross[0, 0])
    rel = abs(cross - want) / want
    elapsed = time.perf_counter() - t0
    _report(5, converged and rel <= 0.02 and elapsed < 30.0,
            f"401-point grid cross-covariance {cross:.6f} vs closed form "
            f"{want:.6f}, rel err {rel:.2%} (tol 2%) in {elapsed:.1f}s (budget 30s)")


def test_criterion_06_monte_carlo_marginals():
    """Zero-policy Euler simulation reproduces the closed-form marginal moments."""
    t0 = time.perf_counter()
    sol = _sym_bm_solution(2)
    grid = make_grid(1.0, 200)
    x0 = gb.sample_gaussian(sol.start, 10_000, seed=77)
    traj = gb.euler_forward(sol, None, x0, grid, seed=78)
    worst_mean = 0.0
    worst_var = 0.0
    targets = [0.25, 0.5, 0.75, grid.t_end]
    for t_want in targets:
        k = int(np.argmin(np.abs(grid.times - t_want)))
        t = float(grid.times[k])
        ref = gb.marginal(sol, t)
        states = traj.states[:, k, :]
        worst_mean = max(worst_mean, float(np.abs(states.mean(axis=0) - ref.mean).max()))
        worst_var = max(worst_var, float(np.abs(
            states.var(axis=0) - np.diag(ref.cov.entries)
        ).max()))
    elapsed = time.perf_counter() - t0
    _report(6, worst_mean <= 0.05 and worst_var <= 0.1 and elapsed < 60.0,
            f"10^4 paths x 200 steps: mean err {worst_mean:.4f} (tol 0.05), "
            f"var err {worst_var:.4f} (tol 0.1) in {elapsed:.1f}s (budget 60s)")


def test_criterion_07_gradient_gates():
    """Analytic loss gradients and divergence match finite differences."""
    rng = np.random.default_rng(3)
    sde = gb.preset("vesde")
    train = gb.PolicyNetwork.create(2, 1.0, hidden=(6, 5), seed=13, zero_final=False)
    frozen = gb.PolicyNetwork.create(2, 1.0, hidden=(6, 5), seed=14, zero_final=False)
    times = rng.uniform(0.05, 0.95, size=6)
    states = rng.normal(size=(6, 2))
    weights = rng.uniform(0.1, 0.4, size=6)

    _, grads = weighted_loss_and_grad(train, frozen, sde, times, states, weights)
    h = 1e-6
    worst_grad = 0.0
    for layer in range(train.n_layers):
        w = train.weights[layer]
        for i, j in ((0, 0), (w.shape[0] - 1, w.shape[1] - 1)):
            w[i, j] += h
            up, _ = weighted_loss_and_grad(train, frozen, sde, times, states, weights,
                                           need_grad=False)
            w[i, j] -= 2 * h
            dn, _ = weighted_loss_and_grad(train, frozen, sde, times, states, weights,
                                           need_grad=False)
            w[i, j] += h
            fd = (up - dn) / (2 * h)
            worst_grad = max(worst_grad,
                             abs(grads[layer][0][i, j] - fd) / max(1.0, abs(fd)))

    x = rng.normal(size=(5, 2))
    got_div = gb.divergence(train, 0.4, x)
    fd_div = np.zeros(5)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd_div += (train(0.4, x + e) - train(0.4, x - e))[:, i] / (2 * h)
    worst_div = float(np.max(np.abs(got_div - fd_div) / np.maximum(1.0, np.abs(fd_div))))

    _report(7, worst_grad <= 1e-4 and worst_div <= 1e-5,
            f"loss-gradient FD error {worst_grad:.2e} (tol 1e-4), "
            f"divergence FD error {worst_div:.2e} (tol 1e-5)")


def _training_ratios(seed: int, scale: float = 1.0):
    """One full pretrain + alternating run; returns per-direction W ratios."""
    spiral = gb.make_spiral(2000, seed=101) * scale
    moons = gb.make_moons(2000, seed=202) * scale
    eps_m = 0.05 * float(pairwise_sq_dists(moons, moons).mean())
    eps_s = 0.05 * float(pairwise_sq_dists(spiral, spiral).mean())

    cfg = gb.TrainConfig(seed=seed)
    state = gb.pretrain(cfg, spiral, moons)
    base_f, _ = gb.generate(state, spiral, "forward", seed=900)
    base_b, _ = gb.generate(state, moons, "backward", seed=901)
    state = gb.train_alternating(cfg, spiral, moons, state)
    gen_f, _ = gb.generate(state, spiral, "forward", seed=900)
    gen_b, _ = gb.generate(state, moons, "backward", seed=901)

    def w(a, b, eps):
        return sinkhorn_weps(a, b, SinkhornConfig(epsilon=eps)).value

    fwd = w(gen_f, moons, eps_m) / w(base_f, moons, eps_m)
    bwd = w(gen_b, spiral, eps_s) / w(base_b, spiral, eps_s)
    return fwd, bwd


@pytest.mark.slow
def test_criterion_08_training_improves_transport():
    """Alternating refinement at least halves both transport distances."""
    t0 = time.perf_counter()
    ratios = [_training_ratios(seed) for seed in (0, 1, 2)]
    elapsed = time.perf_counter() - t0
    worst_f = max(r[0] for r in ratios)
    worst_b = max(r[1] for r in ratios)
    detail = ", ".join(f"seed {s}: fwd {f:.3f}/bwd {b:.3f}"
                       for s, (f, b) in enumerate(ratios))
    _report(8, worst_f <= 0.5 and worst_b <= 0.5 and elapsed < 1200.0,
            f"trained/pretrained W ratios (tol 0.50 each): {detail}; "
            f"{elapsed / 60:.1f} min (budget 20 min)")


@pytest.mark.slow
def test_criterion_09_scale_robustness():
    """Everything keeps working when the data is 20x larger."""
    rng = np.random.default_rng(5)
    worst_boundary = 0.0
    worst_asym = 0.0
    worst_resid = 0.0
    golden_dev = 0.0
    for name, params in PRESET_ARGS:
        sde = gb.preset(name, **params)
        sol = gb.solve(_random_problem(rng, sde, 2, scale=20.0))
        worst_boundary = max(worst_boundary, _boundary_error(sol) / 400.0)
        worst_asym = max(worst_asym, _drift_asymmetry(sol, n_times=20))
        worst_resid = max(worst_resid, _cov_ode_residual(sol))
    # golden fixture scaled by 20 (cov 400): scalar closed form, sigma* stays 1
    sde = gb.preset("bm", nu=1.0)
    g = gb.Gaussian(np.zeros(1), 400.0 * np.eye(1))
    sol = gb.solve(gb.GsbProblem(sde=sde, start=g, end=g))
    want_cross = 0.5 * (np.sqrt(4.0 * 400.0 * 400.0 + 1.0) - 1.0)
    golden_dev = abs(float(sol.cross[0, 0]) - want_cross) / want_cross

    aborted = []
    for seed in (0, 1, 2):
        try:
            _training_ratios(seed, scale=20.0)
        except (gb.NonFiniteLoss, gb.DivergedSimulation) as exc:
            aborted.append(f"seed {seed}: {type(exc).__name__}")
    solver_ok = (worst_boundary <= 1e-10 and worst_asym <= 1e-8
                 and worst_resid <= 1e-4 and golden_dev <= 1e-6)
    _report(9, solver_ok and not aborted,
            f"20x scale: boundary {worst_boundary:.2e}, asymmetry {worst_asym:.2e}, "
            f"residual {worst_resid:.2e}, training aborts: {aborted or 'none'}")


def test_criterion_10_determinism(tmp_path):
    """Identical config + seeds give bit-identical checkpoints and metrics."""
    outputs = []
    for tag in ("one", "two"):
        out = tmp_path / tag
        cfg = {
            "seed": 4,
            "data": {"start": {"dataset": "spiral", "n": 50, "seed": 1},
                     "end": {"dataset": "moons", "n": 50, "seed": 2}},
            "net": {"hidden": [8]},
            "train": {"pretrain_iters_backward": 8, "pretrain_iters_forward": 8,
                      "outer_iters": 1, "inner_iters": 2, "cache_every": 2,
                      "batch_size": 16, "n_cache_paths": 8, "n_steps": 6},
            "eval": {"n_points": 40, "n_steps": 6},
            "output": {"dir": str(out)},
        }
        cfg_path = tmp_path / f"{tag}.json"
        cfg_path.write_text(json.dumps(cfg))
        assert cli_main(["train", "--config", str(cfg_path)]) == 0
        assert cli_main(["generate", "--config", str(cfg_path),
                         "--direction", "forward"]) == 0
        outputs.append({
            "forward.gsbp": (out / "checkpoints" / "final" / "forward.gsbp").read_bytes(),
            "backward.gsbp": (out / "checkpoints" / "final" / "backward.gsbp").read_bytes(),
            "generated": (out / "generated_forward.csv").read_bytes(),
        })
    same = outputs[0] == outputs[1]
    _report(10, same, "two full CLI runs: checkpoints and generated samples "
                      f"{'bit-identical' if same else 'DIFFER'}")
