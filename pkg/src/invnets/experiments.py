"""Experiment pipelines shared by the command line and the acceptance tests.

Every pipeline returns a :class:`Report`: a result table, a list of named
pass/fail checks and the resolved configuration that produced them.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .bnn import fit_geometric_rate, layerwise_iterate
from .invariance import (
    GroupAction,
    apply_action,
    check_l_finite,
    closure_bound_check,
    invariance_defect,
    sample_actions,
)
from .networks import ACTIVATIONS, TrainConfig, circular_shift, make_network, run_cell, width_sweep, zrelu
from .signals import ArrayConfig, ForecastSettings, forecast_benchmark
from .targets import (
    LipschitzSurrogate,
    RadialTarget,
    ShellDensity,
    eval_radial,
    eval_surrogate,
    eval_translation_target,
    sample_shell_uniform,
    sample_translation_shell,
    surrogate_gap_mc,
)


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    threshold: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = ""
        if self.value is not None:
            detail = f" value={self.value:.6g}"
            if self.threshold is not None:
                detail += f" threshold={self.threshold:.6g}"
        return f"[{status}] {self.name}{detail}"


@dataclass
class Report:
    name: str
    config: dict
    columns: list[str]
    rows: list[list]
    checks: list[Check] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def csv_body(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config: {json.dumps(self.config, sort_keys=True)}\n")
        for c in self.checks:
            buf.write(f"# check: {c.line()}\n")
        for note in self.notes:
            buf.write(f"# {note}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def json_body(self) -> str:
        doc = {
            "version": __version__,
            "subcommand": self.name,
            "seed": self.config.get("seed"),
            "config": self.config,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": _json_num(c.value), "threshold": _json_num(c.threshold)}
                for c in self.checks
            ],
            "passed": self.passed,
            "summary": {k: _json_num(v) if isinstance(v, float) else v for k, v in self.summary.items()},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


def _json_num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else str(v)


def thread_map(fn: Callable, items) -> list:
    """``map`` over independent cells, capped by ``INVNETS_THREADS`` (default 1)."""
    raw = os.environ.get("INVNETS_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError:
        raise ValueError(f"INVNETS_THREADS must be a positive integer, got {raw!r}") from None
    items = list(items)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------


def radial_problem(d: int, c2: float = 1.0, N: int = 2, target: str = "surrogate", pattern: str = "alternating", seed: int = 0):
    """Target callable and shell sampler for the radial sweeps."""
    g = RadialTarget.build(d, c2, N=N, pattern=pattern, seed=seed)
    if target == "surrogate":
        h = LipschitzSurrogate(g)
        fn = lambda X: eval_surrogate(h, X)
    elif target == "indicator":
        fn = lambda X: eval_radial(g, X)
    else:
        raise ValueError(f"target must be 'surrogate' or 'indicator', got {target!r}")
    sampler = lambda n, s: sample_shell_uniform(d, c2, n, seed=s)
    return fn, sampler


def translation_problem(d: int, c2: float = 1.0, N: int = 2, target: str = "surrogate", offset_scale: float = 1.0):
    g = RadialTarget.build(d, c2, N=N)
    h = LipschitzSurrogate(g) if target == "surrogate" else g
    fn = lambda X: eval_translation_target(h, X)
    sampler = lambda n, s: sample_translation_shell(d, c2, n, seed=s, offset_scale=offset_scale)
    return fn, sampler


def sweep_config(epochs: int = 1000, lr: float = 0.01, batch: int = 0) -> TrainConfig:
    return TrainConfig(step_size=lr, max_epochs=epochs, batch=batch, optimizer="adam", monotone=False)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def invariance_suite(d: int = 4, samples: int = 1000, actions: int = 10, N: int = 2, c2: float = 1.0, seed: int = 0) -> Report:
    g = RadialTarget.build(d, c2, N=N)
    f = lambda X: eval_radial(g, X)
    shell = lambda n, rng: sample_shell_uniform(d, c2, n, seed=rng)
    rows, checks = [], []

    rot = sample_actions("rotation", d, actions, seed)
    rep = invariance_defect(f, rot, shell, samples, seed)
    rows.append(["radial", "rotation", rep.sup_defect, rep.l2_defect])
    checks.append(Check("radial target rotation defect", rep.sup_defect <= 1e-9, rep.sup_defect, 1e-9))
    perm = sample_actions("permutation", d, actions, seed + 1)
    rep = invariance_defect(f, perm, shell, samples, seed)
    rows.append(["radial", "permutation", rep.sup_defect, rep.l2_defect])
    checks.append(Check("radial target permutation defect", rep.sup_defect <= 1e-9, rep.sup_defect, 1e-9))

    rng = np.random.default_rng(seed)
    X = rng.standard_normal((samples, d))
    for kind in ("permutation", "rotation", "translation"):
        err = 0.0
        for a in sample_actions(kind, d, actions, seed + 2):
            err = max(err, float(np.max(np.abs(apply_action(a.inverse(), apply_action(a, X)) - X))))
            err = max(err, float(np.max(np.abs(apply_action(a.compose(a.inverse()), X) - X))))
        rows.append(["identity", f"{kind} inverse round trip", err, ""])
        checks.append(Check(f"{kind} inverse round trip", err <= 1e-10, err, 1e-10))

    for eps in (0.1, 0.01):
        fe = lambda X, e=eps: np.sum(X**2, axis=-1) + e * np.sin(X[..., 0])
        ge = lambda X: np.sum(X**2, axis=-1)
        res = closure_bound_check(fe, ge, eps, rot, lambda n, r: r.standard_normal((n, d)), samples, seed)
        rows.append([f"closure eps={eps}", "rotation", res.invariance_gap, res.bound])
        checks.append(Check(f"closure bound eps={eps}", res.passed, res.invariance_gap, res.bound))
    cfg = dict(d=d, samples=samples, actions=actions, N=N, c2=c2, seed=seed)
    return Report("invariance-suite", cfg, ["function", "action", "defect", "reference"], rows, checks)


def _gaussian(x):
    return np.exp(-np.asarray(x) ** 2)


LFINITE_FUNCTIONS: dict[str, Callable] = {
    **{k: v[0] for k, v in ACTIVATIONS.items()},
    "gaussian": _gaussian,
    "zrelu_real": lambda x: np.real(zrelu(np.asarray(x, dtype=complex))),
}

# known answers for the standard activations
LFINITE_EXPECTED: dict[tuple[str, int], bool] = {
    ("sigmoid", 1): True,
    ("tanh", 1): True,
    ("relu", 1): False,
    ("relu", 2): True,
    ("softplus", 1): False,
    ("softplus", 2): True,
    ("identity", 1): False,
    ("gaussian", 1): False,
}


def lfinite(activations: Sequence[str] = ("sigmoid", "tanh", "relu", "softplus", "identity", "gaussian"), l: int = 1,
            half_range: float = 20.0, grid: int = 20000, seed: int = 0) -> Report:
    rows, checks = [], []
    for name in activations:
        if name not in LFINITE_FUNCTIONS:
            raise ValueError(f"unknown activation {name!r}; choose from {sorted(LFINITE_FUNCTIONS)}")
        ok, integral = check_l_finite(LFINITE_FUNCTIONS[name], l, half_range, grid)
        rows.append([name, l, int(ok), integral])
        if (name, l) in LFINITE_EXPECTED:
            checks.append(Check(f"{name} {l}-finite is {LFINITE_EXPECTED[(name, l)]}", ok == LFINITE_EXPECTED[(name, l)]))
    cfg = dict(activations=list(activations), l=l, half_range=half_range, grid=grid, seed=seed)
    return Report("lfinite", cfg, ["activation", "l", "l_finite", "integral"], rows, checks)


def gap_bound(d: int = 4, c2: float = 1.0, samples: int = 100000, N: int | None = None, mode: str = "tent_corrected", seed: int = 0) -> Report:
    g = RadialTarget.build(d, c2, N=N)
    h = LipschitzSurrogate(g, mode=mode)
    est, se, bound = surrogate_gap_mc(g, h, ShellDensity(d, c2), samples, seed)
    check = Check("estimate + 3 se <= bound", est + 3 * se <= bound, est + 3 * se, bound)
    cfg = dict(d=d, c2=c2, samples=samples, N=g.N, mode=mode, seed=seed)
    return Report(
        "gap-bound", cfg, ["d", "c2", "N", "mode", "estimate", "std_error", "bound"],
        [[d, c2, g.N, mode, est, se, bound]], [check], summary={"estimate": est, "std_error": se, "bound": bound},
    )


def run_width_sweep(
    arch: str = "cvnn",
    d: int = 4,
    widths: Sequence[int] = (8, 16, 32, 64, 128, 256),
    seeds: int = 5,
    N: int = 2,
    c2: float = 1.0,
    target: str = "surrogate",
    epochs: int = 1000,
    lr: float = 0.01,
    n_train: int = 2000,
    n_test: int = 4000,
    seed: int = 0,
    max_slope: float = -0.5,
):
    fn, sampler = radial_problem(d, c2, N, target)
    res = width_sweep(fn, sampler, arch, list(widths), list(range(seeds)), sweep_config(epochs, lr),
                      n_train, n_test, data_seed=seed, map_fn=thread_map)
    slope = res.loglog_slope()
    checks = [
        Check("median test MSE non-increasing in width", res.is_non_increasing()),
        Check("log-log slope of median test MSE", slope <= max_slope, slope, max_slope),
    ]
    cfg = dict(arch=arch, d=d, widths=list(widths), seeds=seeds, N=N, c2=c2, target=target, epochs=epochs, lr=lr,
               n_train=n_train, n_test=n_test, seed=seed, max_slope=max_slope)
    summary = {"slope": slope, "median_by_width": {str(k): v for k, v in res.median_by_width().items()}}
    return Report("width-sweep", cfg, list(res.CSV_COLUMNS), res.rows(), checks, summary=summary), res


def paired_comparison(cells_a, cells_b) -> tuple[float, list[bool]]:
    """Fraction of shared (budget, seed) cells in which ``a`` has the lower test MSE."""
    b_map = {(k, c.seed): c for k, c in cells_b}
    wins = []
    for k, c in cells_a:
        other = b_map[(k, c.seed)]
        wins.append(bool(c.valid and other.valid and c.test_mse < other.test_mse) or bool(c.valid and not other.valid))
    return (sum(wins) / len(wins) if wins else math.nan), wins


def cvnn_vs_fcn(
    budgets: Sequence[int] = (32, 64, 128, 256),
    seeds: int = 5,
    d: int = 4,
    N: int = 2,
    c2: float = 1.0,
    epochs: int = 1000,
    lr: float = 0.01,
    n_train: int = 2000,
    n_test: int = 4000,
    seed: int = 0,
    cvnn_cells=None,
) -> Report:
    """CVNN of width ``m`` against FCN of width ``2m`` (``12m+2`` vs ``12m+1`` real parameters at ``d = 4``).

    ``cvnn_cells`` may carry CVNN cells already trained on the same data.
    """
    fn, sampler = radial_problem(d, c2, N, "surrogate")
    cfg_t = sweep_config(epochs, lr)
    data = (sampler(n_train, seed), None, sampler(n_test, seed + 1), None)
    data = (data[0], fn(data[0]), data[2], fn(data[2]))
    have = {(c.width, c.seed): c for c in (cvnn_cells or [])}

    def cell(job):
        arch, _, w, s = job
        if arch == "cvnn" and (w, s) in have:
            return have[(w, s)]
        return run_cell(arch, w, s, data, cfg_t)

    factor = 2 if d == 4 else 1
    jobs = [(a, b, b * factor if a == "fcn" else b, s) for b in budgets for s in range(seeds) for a in ("cvnn", "fcn")]
    out = thread_map(cell, jobs)
    cv = [(j[1], c) for j, c in zip(jobs, out) if j[0] == "cvnn"]
    fc = [(j[1], c) for j, c in zip(jobs, out) if j[0] == "fcn"]
    frac, wins = paired_comparison(cv, fc)
    rows = []
    for (b, c), (_, f), win in zip(cv, fc, wins):
        rows.append([b, c.seed, c.param_count, f.param_count, c.test_mse, f.test_mse, int(win)])
    med = {}
    for b in budgets:
        mc = float(np.median([c.test_mse for bb, c in cv if bb == b]))
        mf = float(np.median([c.test_mse for bb, c in fc if bb == b]))
        med[str(b)] = {"cvnn": mc, "fcn": mf}
    checks = [Check("CVNN lower test MSE in >= 60% of matched cells", frac >= 0.6, frac, 0.6)]
    cfg = dict(budgets=list(budgets), seeds=seeds, d=d, N=N, c2=c2, epochs=epochs, lr=lr, n_train=n_train, n_test=n_test, seed=seed)
    return Report("cvnn-vs-fcn", cfg, ["cvnn_width", "seed", "cvnn_params", "fcn_params", "cvnn_test_mse", "fcn_test_mse", "cvnn_wins"],
                  rows, checks, summary={"win_fraction": frac, "medians": med})


def cnn_shift(
    d: int = 16,
    l: int = 4,
    budgets: Sequence[int] = (2, 4, 8, 16),
    seeds: int = 5,
    N: int = 2,
    c2: float = 1.0,
    epochs: int = 300,
    lr: float = 0.01,
    n_train: int = 2000,
    n_test: int = 4000,
    seed: int = 0,
    activation: str = "relu",
) -> Report:
    """Exact circular-shift invariance plus CNN-vs-FCN on the translation target.

    For FCN width ``m`` the CNN gets ``channels`` so that ``channels*(l+2)+1``
    does not exceed ``m*(d+2)+1`` (equality when ``l+2`` divides ``m*(d+2)``).
    """
    rng = np.random.default_rng(seed)
    net = make_network("cnn", d, 3, seed=seed, l=l, circular=True, pooling="mean", activation=activation)
    X = rng.standard_normal((200, d))
    base = net.forward(X)
    shift_err = max(float(np.max(np.abs(net.forward(circular_shift(X, k)) - base))) for k in range(d))
    checks = [Check(f"circular CNN invariant under all {d} shifts", shift_err <= 1e-12, shift_err, 1e-12)]

    fn, sampler = translation_problem(d, c2, N)
    Xtr, Xte = sampler(n_train, seed), sampler(n_test, seed + 1)
    data = (Xtr, fn(Xtr), Xte, fn(Xte))
    cfg_t = sweep_config(epochs, lr)
    opts = dict(l=l, circular=True, pooling="mean", activation=activation)

    def channels_for(m):
        return max(1, (m * (d + 2)) // (l + 2))

    jobs = [(a, m, s) for m in budgets for s in range(seeds) for a in ("cnn", "fcn")]
    out = thread_map(lambda j: run_cell(j[0], channels_for(j[1]) if j[0] == "cnn" else j[1], j[2], data, cfg_t,
                                        opts if j[0] == "cnn" else None), jobs)
    cn = [(j[1], c) for j, c in zip(jobs, out) if j[0] == "cnn"]
    fc = [(j[1], c) for j, c in zip(jobs, out) if j[0] == "fcn"]
    frac, wins = paired_comparison(cn, fc)
    rows = [[m, c.seed, c.width, c.param_count, f.param_count, c.test_mse, f.test_mse, int(w)]
            for (m, c), (_, f), w in zip(cn, fc, wins)]
    checks.append(Check("CNN lower test MSE in >= 60% of matched cells", frac >= 0.6, frac, 0.6))
    cfg = dict(d=d, l=l, budgets=list(budgets), seeds=seeds, N=N, c2=c2, epochs=epochs, lr=lr, n_train=n_train,
               n_test=n_test, seed=seed, activation=activation)
    return Report("cnn-shift", cfg, ["fcn_width", "seed", "cnn_channels", "cnn_params", "fcn_params", "cnn_test_mse", "fcn_test_mse", "cnn_wins"],
                  rows, checks, summary={"shift_error": shift_err, "win_fraction": frac})


def bnn_demo(d: int = 4, width: int = 4, depth: int = 2, n: int = 50, T: int = 30, mc_budget: int = 64, burn_in: int = 3, seed: int = 0) -> Report:
    """Layerwise iteration on a planted tanh network ``y = w2^T tanh(W1 x / d) / width``."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    W1 = rng.standard_normal((width, d))
    w2 = rng.standard_normal(width)
    y = np.tanh(X @ W1.T / d) @ w2 / width
    _, trace = layerwise_iterate((X, y), depth, [width] * (depth - 1), T=T, mc_budget=mc_budget, seed=seed)
    total = trace.total
    tail = total[burn_in:]
    positive = bool(np.all(total > 0))
    decreasing = bool(np.all(np.diff(tail) < 0))
    checks = [Check("trace positive", positive), Check(f"trace decreasing after burn-in {burn_in}", decreasing)]
    if positive and tail.size >= 5:
        alpha, r2 = fit_geometric_rate(tail)
    else:
        alpha, r2 = math.nan, math.nan
    checks += [Check("geometric rate alpha > 1", alpha > 1, alpha, 1.0), Check("fit r^2 >= 0.8", r2 >= 0.8, r2, 0.8)]
    rows = [list(r) for r in csv.reader(io.StringIO(trace.to_csv(burn_in)))][1:]
    cfg = dict(d=d, width=width, depth=depth, n=n, T=T, mc_budget=mc_budget, burn_in=burn_in, seed=seed)
    return Report("bnn-demo", cfg, ["iteration", "layer", "kl_delta", "alpha_running"], rows, checks,
                  summary={"alpha": alpha, "r_squared": r2})


def signal_bench(
    n: int = 10,
    m: int = 20,
    snr: float = 10.0,
    trials: int = 20,
    models: Sequence[str] = ("esprit_predictor", "music_predictor", "fcn:150", "cvnn:150", "cvnn:50"),
    T: int = 512,
    horizon: int = 1,
    rho: float = 0.95,
    seed: int = 0,
) -> Report:
    cfg = ArrayConfig(n=n, m=m, snr_db=snr, rho=rho)
    tab = forecast_benchmark(cfg, list(models), horizon, trials, seed, ForecastSettings(T=T, horizon=horizon), map_fn=thread_map)
    labels = {r.model for r in tab.rows}
    checks = []
    for a, b, strict in (("cvnn:150", "fcn:150", True), ("esprit_predictor", "music_predictor", True), ("cvnn:150", "cvnn:50", False)):
        if a in labels and b in labels:
            va, vb = tab.median(a), tab.median(b)
            ok = va < vb if strict else va <= vb
            checks.append(Check(f"median {a} {'<' if strict else '<='} median {b}", ok, va, vb))
    rows = list(csv.reader(io.StringIO(tab.to_csv().split("\n", 1)[1])))[1:]
    conf = dict(n=n, m=m, snr=snr, trials=trials, models=list(models), T=T, horizon=horizon, rho=rho, seed=seed)
    per_trial = {r.model: [_json_num(v) for v in r.mses] for r in tab.rows}
    return Report("signal-bench", conf, ["model", "settings", "param_count", "mse_median", "mse_iqr", "trials", "valid"], rows, checks,
                  notes=["mse: mean over sensors and held-out snapshots of |z_hat - z|^2 (per-sensor-per-snapshot)"],
                  summary={"per_trial_mse": per_trial})
