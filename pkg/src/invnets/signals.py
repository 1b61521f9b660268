"""Doublet sensor-array simulation, MUSIC/ESPRIT direction finding and a forecasting benchmark.

Each of the ``m`` doublets has two sensors displaced by ``delta``. A plane
wave from angle ``theta`` reaches doublet ``i`` with phase
``omega0 * (i - 1) * delta * sin(theta) / c`` and its second sensor with an
extra ``omega0 * delta * sin(theta) / c``, so the second subarray sees the
first one rotated by ``Phi = diag(exp(j * omega0 * delta * sin(theta_l) / c))``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .networks import CVNN, FCN, TrainConfig, TrainingError, train
from .numerics import ContractError, eig_hermitian, is_hermitian, solve_least_squares

MUSIC_RIDGE = 1e-12


@dataclass(frozen=True, eq=False)
class ArrayConfig:
    """Array geometry and noise model.

    ``noise_cov`` defaults to ``10**(-snr_db/10) * I``: unit-variance sources,
    so ``snr_db`` is the per-sensor, per-source signal-to-noise ratio.
    ``snr_db = inf`` is noiseless.
    """

    n: int
    m: int
    omega0: float = math.pi
    delta: float = 1.0
    c: float = 1.0
    snr_db: float = 10.0
    noise_cov: np.ndarray | None = None
    rho: float = 0.95

    def __post_init__(self):
        if self.n < 0 or self.m < 1 or self.n > self.m:
            raise ContractError(f"need 0 <= n <= m, got n={self.n}, m={self.m}")
        if not 0 <= self.rho <= 1:
            raise ContractError("rho must lie in [0, 1]")
        if self.noise_cov is None:
            var = 0.0 if math.isinf(self.snr_db) else 10.0 ** (-self.snr_db / 10.0)
            cov = var * np.eye(2 * self.m)
        else:
            cov = np.asarray(self.noise_cov, dtype=complex)
            if cov.shape != (2 * self.m, 2 * self.m):
                raise ContractError("noise_cov must be 2m x 2m")
            if not is_hermitian(cov):
                raise ContractError("noise_cov must be Hermitian")
            if np.min(np.linalg.eigvalsh(cov)) < -1e-9:
                raise ContractError("noise_cov must be positive semidefinite")
        object.__setattr__(self, "noise_cov", cov)

    @property
    def kappa(self) -> float:
        """Phase per unit ``sin(theta)`` between adjacent sensors, ``omega0 * delta / c``."""
        return self.omega0 * self.delta / self.c


@dataclass
class SignalBatch:
    P: np.ndarray  # (m, T)
    Q: np.ndarray  # (m, T)
    thetas_true: np.ndarray
    seed: int
    S: np.ndarray | None = None  # (n, T) source signals
    source_freqs: np.ndarray | None = None

    @property
    def Z(self) -> np.ndarray:
        return np.vstack([self.P, self.Q])

    @property
    def T(self) -> int:
        return self.P.shape[1]


@dataclass
class DOAEstimate:
    thetas: np.ndarray
    method: str
    spectrum: np.ndarray | None = None
    grid: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    aliased: np.ndarray | None = None
    response: np.ndarray | None = None  # ESPRIT estimate of [A; A Phi], columns matched to thetas


class PeakDetectionError(RuntimeError):
    def __init__(self, wanted: int, found: Sequence[float]):
        super().__init__(f"MUSIC found {len(found)} peaks above the noise floor, needed {wanted}: {list(np.round(found, 6))}")
        self.found = list(found)


def steering(cfg: ArrayConfig, thetas) -> np.ndarray:
    """Steering matrix ``A`` (m x n) with ``A[i, l] = exp(j kappa i sin(theta_l))``."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    i = np.arange(cfg.m)[:, None]
    return np.exp(1j * cfg.kappa * i * np.sin(thetas)[None, :])


def rotation_operator(cfg: ArrayConfig, thetas) -> np.ndarray:
    return np.exp(1j * cfg.kappa * np.sin(np.atleast_1d(np.asarray(thetas, dtype=float))))


def stacked_steering(cfg: ArrayConfig, thetas) -> np.ndarray:
    """``[A; A Phi]``, the response of all ``2m`` sensors."""
    A = steering(cfg, thetas)
    return np.vstack([A, A * rotation_operator(cfg, thetas)[None, :]])


def _circular_normal(rng, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def simulate_sources(n: int, T: int, rho: float, rng, freqs=None) -> tuple[np.ndarray, np.ndarray]:
    """Stationary unit-variance circular AR(1) sources ``s(t+1) = rho e^{j w} s(t) + sqrt(1-rho^2) u``."""
    if freqs is None:
        freqs = rng.uniform(-math.pi, math.pi, n)
    S = np.empty((n, T), dtype=complex)
    if T == 0 or n == 0:
        return S, np.asarray(freqs, dtype=float)
    S[:, 0] = _circular_normal(rng, n)
    rot = rho * np.exp(1j * np.asarray(freqs))
    innov = math.sqrt(max(0.0, 1.0 - rho**2)) * _circular_normal(rng, (n, T))
    for t in range(1, T):
        S[:, t] = rot * S[:, t - 1] + innov[:, t]
    return S, np.asarray(freqs, dtype=float)


def simulate(cfg: ArrayConfig, thetas, T: int, seed: int = 0, freqs=None) -> SignalBatch:
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if thetas.size != cfg.n:
        raise ContractError(f"expected {cfg.n} angles, got {thetas.size}")
    if np.unique(thetas).size != thetas.size:
        raise ContractError("angles must be distinct")
    if np.any(np.abs(thetas) >= math.pi / 2):
        raise ContractError("angles must lie in (-pi/2, pi/2)")
    rng = np.random.default_rng(seed)
    S, freqs = simulate_sources(cfg.n, T, cfg.rho, rng, freqs)
    Z = stacked_steering(cfg, thetas) @ S
    if np.any(cfg.noise_cov):
        w, V = np.linalg.eigh(cfg.noise_cov)
        root = V * np.sqrt(np.clip(w, 0.0, None))
        Z = Z + root @ _circular_normal(rng, (2 * cfg.m, T))
    return SignalBatch(Z[: cfg.m].copy(), Z[cfg.m :].copy(), thetas, seed, S, freqs)


def sample_covariance(batch: SignalBatch | np.ndarray) -> np.ndarray:
    Z = batch.Z if isinstance(batch, SignalBatch) else np.asarray(batch)
    if Z.ndim != 2 or Z.shape[1] < 1:
        raise ContractError("need at least one snapshot")
    R = Z @ Z.conj().T / Z.shape[1]
    return 0.5 * (R + R.conj().T)


def _signal_subspace(cov: np.ndarray, n: int) -> np.ndarray:
    _, vecs = eig_hermitian(cov)
    return vecs[:, :n]


def esprit(source, cfg: ArrayConfig, n: int | None = None) -> DOAEstimate:
    """Least-squares ESPRIT on the ``[P; Q]`` covariance (or a batch).

    Angles whose operator phase implies ``|sin(theta)| > 1`` are flagged in
    ``aliased`` and reported as ``nan``.
    """
    n = cfg.n if n is None else n
    if not 1 <= n <= cfg.m:
        raise ContractError("need 1 <= n <= m")
    cov = sample_covariance(source) if isinstance(source, SignalBatch) else np.asarray(source)
    Es = _signal_subspace(cov, n)
    psi = solve_least_squares(Es[: cfg.m], Es[cfg.m :])
    lam, U = np.linalg.eig(psi)
    ratio = np.angle(lam) / cfg.kappa
    aliased = np.abs(ratio) > 1
    thetas = np.where(aliased, np.nan, np.arcsin(np.clip(ratio, -1, 1)))
    order = np.argsort(np.where(aliased, np.inf, thetas))
    response = (Es @ U)[:, order]
    return DOAEstimate(thetas[order], "esprit", eigenvalues=lam[order], aliased=aliased[order], response=response)


def music_grid(grid_size: int) -> np.ndarray:
    return -math.pi / 2 + (np.arange(grid_size) + 0.5) * math.pi / grid_size


def music_spectrum(cov, cfg: ArrayConfig, n: int, grid: np.ndarray) -> np.ndarray:
    _, vecs = eig_hermitian(np.asarray(cov))
    En = vecs[:, n:]
    B = stacked_steering(cfg, grid) / math.sqrt(2 * cfg.m)
    proj = np.sum(np.abs(En.conj().T @ B) ** 2, axis=0)
    return 1.0 / (proj + MUSIC_RIDGE)


def music(
    cov, cfg: ArrayConfig, n: int | None = None, grid_size: int = 1024, floor_factor: float = 10.0, strict: bool = True
) -> DOAEstimate:
    """Grid-search MUSIC; peaks must exceed ``floor_factor`` times the median spectrum.

    With ``strict=False`` the floor is dropped and the ``n`` highest local
    maxima are returned (fewer if the spectrum has fewer), which is what a
    predictor that must always produce an estimate needs.
    """
    n = cfg.n if n is None else n
    if grid_size < 64:
        raise ContractError("grid_size must be >= 64")
    if not 1 <= n < 2 * cfg.m:
        raise ContractError("need 1 <= n < 2m")
    if isinstance(cov, SignalBatch):
        cov = sample_covariance(cov)
    grid = music_grid(grid_size)
    spec = music_spectrum(cov, cfg, n, grid)
    interior = (spec[1:-1] > spec[:-2]) & (spec[1:-1] >= spec[2:])
    peaks = np.flatnonzero(interior) + 1
    if spec[0] > spec[1]:
        peaks = np.append(peaks, 0)
    if spec[-1] > spec[-2]:
        peaks = np.append(peaks, grid_size - 1)
    floor = floor_factor * float(np.median(spec)) if strict else -math.inf
    strong = peaks[spec[peaks] >= floor]
    strong = strong[np.argsort(spec[strong])[::-1]]
    if strong.size < n and (strict or strong.size == 0):
        raise PeakDetectionError(n, grid[strong])
    chosen = np.sort(strong[:n])
    return DOAEstimate(grid[chosen], "music", spectrum=spec, grid=grid)


def esprit_timing(ns: Sequence[int] = (2, 4, 8, 16), m: int = 32, T: int = 256, seed: int = 0, repeats: int = 3) -> list[tuple[int, float]]:
    """Wall-clock seconds of ESPRIT against the source count (a sanity curve only)."""
    out = []
    for n in ns:
        cfg = ArrayConfig(n=n, m=max(m, n), snr_db=20.0)
        thetas = np.linspace(-1.0, 1.0, n) if n > 1 else np.array([0.3])
        cov = sample_covariance(simulate(cfg, thetas, T, seed))
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            esprit(cov, cfg, n)
            best = min(best, time.perf_counter() - t0)
        out.append((n, best))
    return out


# ---------------------------------------------------------------------------
# forecasting
# ---------------------------------------------------------------------------


MODEL_KINDS = ("cvnn", "fcn", "esprit_predictor", "music_predictor")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    width: int = 0

    @classmethod
    def parse(cls, text: str) -> "ModelSpec":
        kind, _, width = text.partition(":")
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model {kind!r}; choose from {MODEL_KINDS}")
        if kind in ("cvnn", "fcn"):
            if not width:
                raise ValueError(f"{kind} needs a width, e.g. {kind}:150")
            return cls(kind, int(width))
        if width:
            raise ValueError(f"{kind} takes no width")
        return cls(kind)

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.width}" if self.width else self.kind


@dataclass(frozen=True)
class ForecastSettings:
    T: int = 512
    train_frac: float = 0.8
    window: int = 10
    horizon: int = 1
    max_windows: int = 16000
    epochs: int = 40
    step_size: float = 0.002
    batch: int = 256
    grid_size: int = 1024
    min_separation: float = 0.0
    max_angle: float = math.pi / 2


def draw_angles(n: int, rng, max_angle: float = math.pi / 2, min_separation: float = 0.0) -> np.ndarray:
    """``n`` sorted angles in ``(-max_angle, max_angle)`` at least ``min_separation`` apart.

    With the defaults these are i.i.d. uniform angles (sorted), so close
    source pairs occur at their natural rate.
    """
    slack = 2 * max_angle - (n - 1) * min_separation
    if slack <= 0:
        raise ValueError("cannot fit that many separated angles")
    while True:
        gaps = np.sort(rng.uniform(0, slack, n))
        thetas = -max_angle + gaps + min_separation * np.arange(n)
        if np.all(np.abs(thetas) < max_angle) and np.unique(thetas).size == n:
            return thetas


def _fit_ar1(S: np.ndarray) -> np.ndarray:
    num = np.sum(S[:, 1:] * S[:, :-1].conj(), axis=1)
    den = np.sum(np.abs(S[:, :-1]) ** 2, axis=1)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def subspace_forecast(Z: np.ndarray, split: int, A: np.ndarray, horizon: int = 1) -> np.ndarray:
    """Predictions of ``Z[:, t + horizon]`` for every test origin ``t >= split - 1``.

    ``A`` is an estimate of the 2m x n array response. Sources are recovered
    by least squares on it, each gets an AR(1) fit on the training span, and
    the response is re-synthesized from the propagated sources.
    """
    S_hat = np.linalg.pinv(A) @ Z
    phi = _fit_ar1(S_hat[:, :split])
    origins = np.arange(split - 1, Z.shape[1] - horizon)
    return A @ (phi[:, None] ** horizon * S_hat[:, origins])


def _windows(series: np.ndarray, window: int, horizon: int, origins: np.ndarray):
    """Per-sensor lag windows (newest last) ending at each origin, with their targets."""
    idx = origins[:, None] + np.arange(-window + 1, 1)[None, :]
    X = series[:, idx]  # (sensors, origins, window)
    y = series[:, origins + horizon]
    return X.reshape(-1, window), y.reshape(-1)


@dataclass
class _NeuralForecaster:
    spec: ModelSpec
    window: int
    seed: int
    net: object = None
    scale: float = 1.0

    def param_count(self) -> int:
        if self.spec.kind == "cvnn":
            return CVNN.init(self.window, self.spec.width).param_count()
        return FCN.init(self.window, self.spec.width).param_count()

    def fit(self, X: np.ndarray, y: np.ndarray, cfg: TrainConfig):
        self.scale = float(np.sqrt(np.mean(np.abs(X) ** 2))) or 1.0
        Xs, ys = X / self.scale, y / self.scale
        if self.spec.kind == "cvnn":
            net = CVNN.init(self.window, self.spec.width, seed=self.seed, real_output=False)
            self.net = train(net, Xs, ys, cfg).net
        else:
            # one real network shared by the real and imaginary channels
            Xr = np.concatenate([Xs.real, Xs.imag])
            yr = np.concatenate([ys.real, ys.imag])
            net = FCN.init(self.window, self.spec.width, seed=self.seed)
            self.net = train(net, Xr, yr, cfg).net
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xs = X / self.scale
        if self.spec.kind == "cvnn":
            out = self.net.forward(Xs)
        else:
            out = self.net.forward(Xs.real) + 1j * self.net.forward(Xs.imag)
        return np.asarray(out).reshape(-1) * self.scale


@dataclass
class BenchmarkRow:
    model: str
    settings: str
    param_count: int | None
    mses: list[float]
    valid: bool = True

    @property
    def finite(self) -> np.ndarray:
        return np.array([v for v in self.mses if math.isfinite(v)])

    @property
    def mse_median(self) -> float:
        f = self.finite
        return float(np.median(f)) if f.size else math.nan

    @property
    def mse_iqr(self) -> float:
        f = self.finite
        if not f.size:
            return math.nan
        q1, q3 = np.percentile(f, [25, 75])
        return float(q3 - q1)


BENCHMARK_COLUMNS = ["model", "settings", "param_count", "mse_median", "mse_iqr", "trials", "valid"]
MSE_NOTE = "# mse: mean over sensors and held-out snapshots of |z_hat - z|^2 (per-sensor-per-snapshot)"


@dataclass
class BenchmarkTable:
    rows: list[BenchmarkRow]
    config: dict = field(default_factory=dict)

    def row(self, label: str) -> BenchmarkRow:
        for r in self.rows:
            if r.model == label:
                return r
        raise KeyError(label)

    def median(self, label: str) -> float:
        return self.row(label).mse_median

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(MSE_NOTE + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCHMARK_COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    r.model,
                    r.settings,
                    "" if r.param_count is None else r.param_count,
                    f"{r.mse_median:.10g}",
                    f"{r.mse_iqr:.10g}",
                    len(r.mses),
                    int(r.valid),
                ]
            )
        return buf.getvalue()


def _settings_text(spec: ModelSpec, window: int) -> str:
    if spec.kind in ("cvnn", "fcn"):
        return f"size({window},{spec.width},1)"
    return "--"


def run_trial(cfg: ArrayConfig, specs: Sequence[ModelSpec], settings: ForecastSettings, seed: int) -> dict[str, float]:
    """One simulated scene; returns per-model test MSE (``nan`` on failure)."""
    rng = np.random.default_rng(seed)
    thetas = draw_angles(cfg.n, rng, settings.max_angle, settings.min_separation)
    batch = simulate(cfg, thetas, settings.T, seed=int(rng.integers(2**31)))
    Z = batch.Z
    split = int(round(settings.train_frac * settings.T))
    h, win = settings.horizon, settings.window
    test_origins = np.arange(split - 1, settings.T - h)
    truth = Z[:, test_origins + h]
    cov = sample_covariance(Z[:, :split])

    train_origins = np.arange(win - 1, split - h)
    Xtr, ytr = _windows(Z, win, h, train_origins)
    if len(Xtr) > settings.max_windows:
        keep = np.sort(rng.choice(len(Xtr), settings.max_windows, replace=False))
        Xtr, ytr = Xtr[keep], ytr[keep]
    Xte, _ = _windows(Z, win, h, test_origins)
    tcfg = TrainConfig(
        step_size=settings.step_size, max_epochs=settings.epochs, batch=settings.batch, optimizer="adam", monotone=False, seed=seed
    )

    out: dict[str, float] = {}
    for spec in specs:
        try:
            if spec.kind == "esprit_predictor":
                est = esprit(cov, cfg)
                if np.any(est.aliased):
                    raise ValueError("aliased ESPRIT estimate")
                # ESPRIT estimates the response directly (signal subspace times operator eigenvectors)
                pred = subspace_forecast(Z, split, est.response, h)
            elif spec.kind == "music_predictor":
                est = music(cov, cfg, grid_size=settings.grid_size, strict=False)
                pred = subspace_forecast(Z, split, stacked_steering(cfg, est.thetas), h)
            else:
                model = _NeuralForecaster(spec, win, seed).fit(Xtr, ytr, tcfg)
                pred = model.predict(Xte).reshape(truth.shape)
            out[spec.label] = float(np.mean(np.abs(pred - truth) ** 2))
        except (TrainingError, PeakDetectionError, ContractError, ValueError, np.linalg.LinAlgError):
            out[spec.label] = math.nan
    return out


def forecast_benchmark(
    cfg: ArrayConfig,
    models: Sequence[str | ModelSpec] = ("esprit_predictor", "music_predictor", "fcn:150", "cvnn:150", "cvnn:50"),
    horizon: int = 1,
    trials: int = 20,
    seed: int = 0,
    settings: ForecastSettings | None = None,
    map_fn=map,
) -> BenchmarkTable:
    if trials < 5:
        raise ValueError("need at least 5 trials")
    settings = settings or ForecastSettings()
    if horizon != settings.horizon:
        settings = ForecastSettings(**{**settings.__dict__, "horizon": horizon})
    specs = [m if isinstance(m, ModelSpec) else ModelSpec.parse(m) for m in models]
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(trials)]
    results = list(map_fn(lambda s: run_trial(cfg, specs, settings, s), seeds))
    rows = []
    for spec in specs:
        mses = [r[spec.label] for r in results]
        pc = _NeuralForecaster(spec, settings.window, 0).param_count() if spec.kind in ("cvnn", "fcn") else None
        rows.append(BenchmarkRow(spec.label, _settings_text(spec, settings.window), pc, mses, all(map(math.isfinite, mses))))
    conf = {"n": cfg.n, "m": cfg.m, "snr_db": cfg.snr_db, "rho": cfg.rho, "trials": trials, "seed": seed, **settings.__dict__}
    return BenchmarkTable(rows, conf)
