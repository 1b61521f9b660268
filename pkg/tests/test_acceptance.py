"""Acceptance criteria 1-11 at their stated tolerances and runtime limits.

Each test prints one ``PASS``/``FAIL`` line; ``conftest.py`` repeats them
all in the terminal summary. Criteria 5, 6, 7 and 11 train networks and take
minutes.
"""

import math
import time

import numpy as np
import pytest

from invnets import experiments as ex
from invnets.bnn import (
    GaussianBelief,
    build_translation_basis,
    gaussian_product,
    linear_posterior,
    woodbury_inverse,
)
from invnets.invariance import closure_bound_check, gaussian_sampler, invariance_defect, sample_actions
from invnets.networks import zrelu
from invnets.signals import ArrayConfig, esprit, music, sample_covariance, simulate
from invnets.targets import (
    LipschitzSurrogate,
    RadialTarget,
    ShellDensity,
    eval_radial,
    eval_surrogate,
    sample_shell_uniform,
    surrogate_gap_mc,
)

RESULTS: dict[int, str] = {}


def record(capsys, number, title, passed, detail, elapsed, limit):
    on_time = elapsed < limit
    ok = bool(passed and on_time)
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}; {detail}; {elapsed:.1f}s (limit {limit:g}s)"
    RESULTS[number] = line
    with capsys.disabled():
        print("\n" + line)
    assert passed, line
    assert on_time, line


def test_criterion_01_zrelu_homogeneity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    z = rng.standard_normal(1000) + 1j * rng.standard_normal(1000)
    alpha = rng.uniform(-5, 5, 1000)
    worst = float(np.max(np.abs(zrelu(alpha * z) - alpha * zrelu(z))))
    record(capsys, 1, "zReLU real homogeneity", worst <= 1e-12, f"max defect {worst:.2e} <= 1e-12", time.perf_counter() - t0, 1)


def test_criterion_02_invariance_suite(capsys):
    t0 = time.perf_counter()
    rep = ex.invariance_suite(d=4, samples=1000, actions=10)
    # also the surrogate and two further dimensions
    extra = 0.0
    for d in (9, 16):
        g = RadialTarget.build(d, 1.0, N=4)
        h = LipschitzSurrogate(g)
        shell = lambda n, rng, d=d: sample_shell_uniform(d, 1.0, n, seed=rng)
        for fn in (lambda X, g=g: eval_radial(g, X), lambda X, h=h: eval_surrogate(h, X)):
            extra = max(extra, invariance_defect(fn, sample_actions("rotation", d, 10, seed=d), shell, 1000).sup_defect)
    wanted = [c for c in rep.checks if "rotation defect" in c.name or "round trip" in c.name]
    defect = max(c.value for c in wanted if "defect" in c.name)
    trip = max(c.value for c in wanted if "round trip" in c.name)
    passed = all(c.passed for c in wanted) and extra <= 1e-9
    detail = f"rotation defect {max(defect, extra):.2e} <= 1e-9, round trip {trip:.2e} <= 1e-10"
    record(capsys, 2, "invariance suite", passed, detail, time.perf_counter() - t0, 10)


def test_criterion_03_closure_bound(capsys):
    t0 = time.perf_counter()
    d = 4
    acts = sample_actions("rotation", d, 10, seed=0)
    g_r = RadialTarget.build(d, 1.0, N=4)
    h_r = LipschitzSurrogate(g_r)
    pairs = {
        "norm": (lambda X: np.sum(X**2, axis=-1), lambda X, e: np.sin(X[:, 0]) * e),
        "surrogate": (lambda X: eval_surrogate(h_r, X), lambda X, e: e * np.tanh(X[:, 1] - X[:, 2])),
    }
    gaps, passed = [], True
    for eps in (0.1, 0.01):
        for name, (g, bump) in pairs.items():
            f = lambda X, g=g, bump=bump, e=eps: g(X) + bump(X, e)
            res = closure_bound_check(f, g, eps, acts, gaussian_sampler(d) if name == "norm" else
                                      (lambda n, rng: sample_shell_uniform(d, 1.0, n, seed=rng)), 2000, seed=1, tol=1e-6)
            passed &= res.passed
            gaps.append(f"{name} eps={eps}: {res.invariance_gap:.4f} <= {res.bound:.6f}")
    record(capsys, 3, "closure bound", passed, ", ".join(gaps), time.perf_counter() - t0, 10)


def test_criterion_04_gap_bound(capsys):
    t0 = time.perf_counter()
    parts, passed = [], True
    for d in (4, 9, 16):
        g = RadialTarget.build(d, 1.0)
        est, se, bound = surrogate_gap_mc(g, LipschitzSurrogate(g), ShellDensity(d, 1.0), 100_000, seed=0)
        passed &= est + 3 * se <= bound
        parts.append(f"d={d} N={g.N}: {est + 3 * se:.4f} <= {bound:.4f}")
    record(capsys, 4, "surrogate gap bound", passed, ", ".join(parts), time.perf_counter() - t0, 60)


@pytest.fixture(scope="module")
def cvnn_sweep():
    t0 = time.perf_counter()
    report, res = ex.run_width_sweep(arch="cvnn", d=4, widths=(8, 16, 32, 64, 128, 256), seeds=5)
    return report, res, time.perf_counter() - t0


def test_criterion_05_width_trend(capsys, cvnn_sweep):
    report, res, elapsed = cvnn_sweep
    med = res.median_by_width()
    slope = res.loglog_slope()
    passed = res.is_non_increasing() and slope <= -0.5
    detail = "medians " + " ".join(f"{w}:{v:.4f}" for w, v in med.items()) + f", non-increasing={res.is_non_increasing()}, slope {slope:.3f} <= -0.5"
    record(capsys, 5, "CVNN width-error trend", passed, detail, elapsed, 15 * 60)


def test_criterion_06_cvnn_vs_fcn(capsys, cvnn_sweep):
    _, res, sweep_time = cvnn_sweep
    t0 = time.perf_counter()
    rep = ex.cvnn_vs_fcn(budgets=(32, 64, 128, 256), seeds=5, cvnn_cells=res.cells)
    elapsed = time.perf_counter() - t0
    frac = rep.summary["win_fraction"]
    meds = " ".join(f"m={b}:{v['cvnn']:.4f}/{v['fcn']:.4f}" for b, v in rep.summary["medians"].items())
    detail = f"CVNN wins {frac:.0%} of 20 matched cells (need >= 60%); median CVNN/FCN {meds}; reused CVNN cells from criterion 5 ({sweep_time:.0f}s)"
    record(capsys, 6, "CVNN vs FCN at matched parameters", frac >= 0.6, detail, elapsed, 20 * 60)


def test_criterion_07_cnn_shift(capsys):
    t0 = time.perf_counter()
    rep = ex.cnn_shift(d=16, l=4, budgets=(2, 4, 8, 16), seeds=5)
    shift, frac = rep.summary["shift_error"], rep.summary["win_fraction"]
    passed = shift <= 1e-12 and frac >= 0.6
    detail = f"shift error {shift:.2e} <= 1e-12, CNN wins {frac:.0%} of 20 matched cells (need >= 60%)"
    record(capsys, 7, "CNN shift invariance and CNN vs FCN", passed, detail, time.perf_counter() - t0, 10 * 60)


def _grid_moments(logp_fn, lo=-16.0, hi=16.0, n=1601):
    g = np.linspace(lo, hi, n)
    W = np.stack([a.ravel() for a in np.meshgrid(g, g, indexing="ij")], axis=1)
    logp = logp_fn(W)
    p = np.exp(logp - logp.max())
    p /= p.sum()
    mean = p @ W
    C = W - mean
    return mean, (C * p[:, None]).T @ C


def _log_gauss(W, mean, cov):
    D = W - mean
    return -0.5 * np.einsum("ni,ij,nj->n", D, np.linalg.inv(cov), D)


def _spd(d, rng):
    m = rng.standard_normal((d, d))
    return m @ m.T + 0.5 * np.eye(d)


def test_criterion_08_bnn_algebra(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    oracle_err = 0.0
    for _ in range(3):
        q = GaussianBelief(0.5 * rng.standard_normal(2), _spd(2, rng))
        p = GaussianBelief(0.5 * rng.standard_normal(2), _spd(2, rng))
        m, C = _grid_moments(lambda W: _log_gauss(W, q.mean, q.cov) + _log_gauss(W, p.mean, p.cov))
        r = gaussian_product(q, p)
        oracle_err = max(oracle_err, np.max(np.abs(r.mean - m)), np.max(np.abs(r.cov - C)))
        x, y, s2 = 1.5 * rng.standard_normal(2), float(rng.standard_normal()), 0.3
        m, C = _grid_moments(lambda W: _log_gauss(W, p.mean, p.cov) - 0.5 * (y - W @ x / 2) ** 2 / s2)
        r = linear_posterior(x, y, s2, p)
        oracle_err = max(oracle_err, np.max(np.abs(r.mean - m)), np.max(np.abs(r.cov - C)))

    annihil = 0.0
    for d in range(2, 33):
        for _ in range(5):
            x = rng.standard_normal(d)
            tb = build_translation_basis(x)
            annihil = max(annihil, float(np.max(np.abs(tb.B.T @ x))))

    wood = 0.0
    for d in (3, 8, 16):
        S = _spd(d, rng)
        B = build_translation_basis(rng.standard_normal(d)).B
        for beta in (1.0, 3.0, 10.0):
            wood = max(wood, float(np.max(np.abs(woodbury_inverse(S, B, beta) - np.linalg.inv(S + beta**2 * B @ B.T)))))

    ident = 0.0
    for k in range(100):
        d = 2 + k % 7
        Sx, Sw = _spd(d, rng), _spd(d, rng)
        lhs = np.linalg.inv(np.linalg.inv(Sw) + np.linalg.inv(Sx))
        ident = max(ident, float(np.max(np.abs(lhs - Sx @ np.linalg.solve(Sx + Sw, Sw)))))

    passed = oracle_err <= 1e-3 and annihil <= 1e-12 and wood <= 1e-8 and ident <= 1e-8
    detail = f"grid oracle {oracle_err:.1e} <= 1e-3, B^T x {annihil:.1e} <= 1e-12, Woodbury {wood:.1e} <= 1e-8, identity {ident:.1e} <= 1e-8"
    record(capsys, 8, "BNN algebra", passed, detail, time.perf_counter() - t0, 60)


def test_criterion_09_bnn_convergence(capsys):
    t0 = time.perf_counter()
    rep = ex.bnn_demo(d=4, width=4, depth=2, T=30, burn_in=3)
    pos, dec = rep.checks[0].passed, rep.checks[1].passed
    alpha, r2 = rep.summary["alpha"], rep.summary["r_squared"]
    passed = pos and dec and alpha > 1 and r2 >= 0.8
    detail = f"positive={pos}, decreasing after burn-in 3={dec}, alpha {alpha:.3f} > 1, r^2 {r2:.4f} >= 0.8"
    record(capsys, 9, "BNN layerwise convergence", passed, detail, time.perf_counter() - t0, 120)


def test_criterion_10_subspace_estimators(capsys):
    t0 = time.perf_counter()
    cell = math.pi / 1024
    e_err = m_err = mod_err = 0.0
    cases = [(-0.4, 0.5), (0.1, 0.2), (-1.2, 0.9), (0.0, 0.7)]
    for k, thetas in enumerate(cases):
        cfg = ArrayConfig(n=2, m=8, snr_db=math.inf)
        cov = sample_covariance(simulate(cfg, thetas, 256, seed=k))
        est = esprit(cov, cfg)
        e_err = max(e_err, float(np.max(np.abs(est.thetas - np.sort(thetas)))))
        mod_err = max(mod_err, float(np.max(np.abs(np.abs(est.eigenvalues) - 1))))
        mus = music(cov, cfg, grid_size=1024)
        m_err = max(m_err, float(np.max(np.abs(mus.thetas - np.sort(thetas)))))
    passed = e_err <= 1e-6 and m_err <= cell and mod_err <= 1e-6
    detail = f"ESPRIT {e_err:.1e} <= 1e-6 rad, MUSIC {m_err:.2e} <= {cell:.2e} (one cell), |lambda|-1 {mod_err:.1e} <= 1e-6"
    record(capsys, 10, "subspace estimators", passed, detail, time.perf_counter() - t0, 30)


def test_criterion_11_table_ordering(capsys):
    t0 = time.perf_counter()
    rep = ex.signal_bench(n=10, m=20, snr=10.0, trials=20)
    parts = [f"{c.name} ({c.value:.3f} vs {c.threshold:.3f}): {'ok' if c.passed else 'violated'}" for c in rep.checks]
    record(capsys, 11, "forecast ordering", rep.passed and len(rep.checks) == 3, "; ".join(parts), time.perf_counter() - t0, 30 * 60)
