"""One-hidden-layer FCN, CVNN (zReLU) and 1-D CNN models.

All models expose the same small surface used by :func:`train`:

* ``forward(X)`` -- batched evaluation, ``X`` of shape ``(n, d)``;
* ``get_params()`` / ``set_params(theta)`` -- flat real parameter vector;
* ``loss_and_grad(X, y)`` -- mean squared error and its gradient.

Complex weights are trained through their real and imaginary coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .numerics import phase_array

# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "sigmoid": (_sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x))),
    "abs": (np.abs, np.sign),
    "square": (lambda x: x * x, lambda x: 2.0 * x),
    "softplus": (lambda x: np.logaddexp(0.0, x), _sigmoid),
}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def zrelu_gate(z) -> np.ndarray:
    """True where the phase of ``z`` lies in ``[0, pi/2] U [pi, 3pi/2]``.

    Those two closed quadrants are exactly where ``Re z`` and ``Im z`` do not
    have strictly opposite signs.
    """
    z = np.asarray(z, dtype=complex)
    return z.real * z.imag >= 0.0


def zrelu(z):
    """zReLU: pass ``z`` when its phase is in the first or third quadrant, else 0."""
    z_arr = np.asarray(z, dtype=complex)
    out = np.where(zrelu_gate(z_arr), z_arr, 0.0 + 0.0j)
    if out.ndim == 0:
        return complex(out)
    return out


def zrelu_by_phase(z):
    """Reference zReLU evaluated from the phase angle itself (slower, used as a cross-check)."""
    z_arr = np.asarray(z, dtype=complex)
    theta = phase_array(z_arr)
    keep = ((theta >= 0) & (theta <= math.pi / 2)) | ((theta >= math.pi) & (theta <= 1.5 * math.pi))
    out = np.where(keep & (z_arr != 0), z_arr, 0.0 + 0.0j)
    return complex(out) if out.ndim == 0 else out


class DimensionError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, message: str = "training diverged"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


def _as_batch(x, d: int, dtype=float) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=dtype)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise DimensionError(f"expected inputs of dimension {d}, got shape {np.shape(x)}")
    return arr, single


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass
class FCN:
    """``w^T sigma(V x + b) + a`` with real weights; ``w`` may have several output columns."""

    V: np.ndarray
    b: np.ndarray
    w: np.ndarray
    a: np.ndarray
    activation: str = "relu"

    arch = "fcn"

    @classmethod
    def init(cls, d: int, width: int, seed=0, activation="relu", outputs: int = 1) -> "FCN":
        rng = np.random.default_rng(seed)
        return cls(
            V=rng.standard_normal((width, d)) / math.sqrt(d),
            b=rng.standard_normal(width),
            w=rng.standard_normal((width, outputs)) / math.sqrt(width),
            a=np.zeros(outputs),
            activation=activation,
        )

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @property
    def width(self) -> int:
        return self.V.shape[0]

    @property
    def outputs(self) -> int:
        return self.w.shape[1]

    def param_count(self) -> int:
        m, d, k = self.width, self.d, self.outputs
        return m * d + m + m * k + k

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.V.ravel(), self.b, self.w.ravel(), self.a])

    def set_params(self, theta: np.ndarray) -> "FCN":
        m, d, k = self.width, self.d, self.outputs
        i = 0
        V = theta[i : i + m * d].reshape(m, d); i += m * d
        b = theta[i : i + m]; i += m
        w = theta[i : i + m * k].reshape(m, k); i += m * k
        a = theta[i : i + k]
        return replace(self, V=V.copy(), b=b.copy(), w=w.copy(), a=a.copy())

    def _hidden(self, X):
        pre = X @ self.V.T + self.b
        return pre, activation(self.activation)[0](pre)

    def forward(self, x):
        X, single = _as_batch(x, self.d)
        _, h = self._hidden(X)
        out = h @ self.w + self.a
        if self.outputs == 1:
            out = out[:, 0]
        return out[0] if single else out

    def loss_and_grad(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1)
        n = X.shape[0]
        pre, h = self._hidden(X)
        r = h @ self.w + self.a - Y
        loss = float(np.mean(np.sum(r * r, axis=1)))
        g_out = 2.0 * r / n
        g_w = h.T @ g_out
        g_a = g_out.sum(axis=0)
        g_pre = (g_out @ self.w.T) * activation(self.activation)[1](pre)
        g_V = g_pre.T @ X
        g_b = g_pre.sum(axis=0)
        return loss, np.concatenate([g_V.ravel(), g_b, g_w.ravel(), g_a])


@dataclass
class CVNN:
    """``[sum_i w_i zReLU(v_i^T x + b_i) + a]`` with complex weights.

    With ``real_output`` the real part is returned (the radial experiments);
    otherwise the complex value itself (the forecasting experiments, where
    inputs and targets are complex).
    """

    V: np.ndarray
    b: np.ndarray
    w: np.ndarray
    a: np.ndarray
    real_output: bool = True

    arch = "cvnn"

    @classmethod
    def init(cls, d: int, width: int, seed=0, outputs: int = 1, real_output: bool = True) -> "CVNN":
        rng = np.random.default_rng(seed)

        def cgauss(shape, scale):
            return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)

        return cls(
            V=cgauss((width, d), 1.0 / math.sqrt(d)),
            b=cgauss(width, 1.0),
            w=cgauss((width, outputs), 1.0 / math.sqrt(width)),
            a=np.zeros(outputs, dtype=complex),
            real_output=real_output,
        )

    @property
    def d(self) -> int:
        return self.V.shape[1]

    @property
    def width(self) -> int:
        return self.V.shape[0]

    @property
    def outputs(self) -> int:
        return self.w.shape[1]

    def param_count(self) -> int:
        m, d, k = self.width, self.d, self.outputs
        return 2 * (m * d + m + m * k + k)

    def get_params(self) -> np.ndarray:
        parts = [self.V.ravel(), self.b, self.w.ravel(), self.a]
        return np.concatenate([np.concatenate([p.real, p.imag]) for p in parts])

    def set_params(self, theta: np.ndarray) -> "CVNN":
        m, d, k = self.width, self.d, self.outputs
        sizes = [m * d, m, m * k, k]
        out, i = [], 0
        for s in sizes:
            out.append(theta[i : i + s] + 1j * theta[i + s : i + 2 * s])
            i += 2 * s
        V, b, w, a = out
        return replace(self, V=V.reshape(m, d), b=b.copy(), w=w.reshape(m, k), a=a.copy())

    def _hidden(self, X):
        if np.isrealobj(X):
            # two real products are 2x cheaper than one complex product
            u = (X @ self.V.real.T + self.b.real) + 1j * (X @ self.V.imag.T + self.b.imag)
        else:
            u = X @ self.V.T + self.b
        gate = zrelu_gate(u)
        return u, gate, np.where(gate, u, 0.0)

    def forward(self, x):
        arr = np.asarray(x)
        X, single = _as_batch(arr, self.d, dtype=complex if np.iscomplexobj(arr) else float)
        _, _, h = self._hidden(X)
        out = h @ self.w + self.a
        if self.real_output:
            out = out.real
        if self.outputs == 1:
            out = out[:, 0]
        return out[0] if single else out

    def loss_and_grad(self, X, Y):
        X = np.asarray(X)
        if not np.iscomplexobj(X):
            X = X.astype(float)
        n = X.shape[0]
        u, gate, h = self._hidden(X)
        out = h @ self.w + self.a
        if self.real_output:
            Y = np.asarray(Y, dtype=float).reshape(n, -1)
            r = out.real - Y
        else:
            Y = np.asarray(Y, dtype=complex).reshape(n, -1)
            r = out - Y
        loss = float(np.mean(np.sum(np.abs(r) ** 2, axis=1)))
        # Wirtinger form: for L = mean |r|^2 and r holomorphic in a parameter p,
        # dL/dRe p + i dL/dIm p = 2 conj(dr/dp) r / n.
        g_out = 2.0 * r / n
        g_w = h.conj().T @ g_out
        g_a = g_out.sum(axis=0).astype(complex)
        g_h = g_out @ self.w.conj().T
        g_u = np.where(gate, g_h, 0.0)
        if np.isrealobj(X):
            g_V = (g_u.real.T @ X) + 1j * (g_u.imag.T @ X)
        else:
            g_V = g_u.T @ X.conj()
        g_b = g_u.sum(axis=0)
        if self.real_output:
            # r = Re(out): only the real part of a contributes
            g_a = g_a.real.astype(complex)
        parts = [g_V.ravel(), g_b, g_w.ravel(), g_a]
        return loss, np.concatenate([np.concatenate([p.real, p.imag]) for p in parts])


@dataclass
class CNN1D:
    """Shared filters slid along the input, an activation, optional mean pooling, linear head.

    With one channel, identity activation and no bias this is exactly the
    sliding dot product ``sum_i w_i x_{i+k}``. ``circular`` wraps the window
    around the end of the input; combined with mean pooling the model is
    exactly invariant to circular shifts.
    """

    filters: np.ndarray  # (channels, l)
    head: np.ndarray  # (channels,) when pooled, (channels, K) otherwise
    head_bias: float
    d: int
    pooling: str = "mean"
    circular: bool = False
    activation: str = "identity"
    conv_bias: np.ndarray | None = None  # (channels,) or None

    arch = "cnn"

    def __post_init__(self):
        self.filters = np.atleast_2d(np.asarray(self.filters, dtype=float))
        if self.filters.shape[1] >= self.d:
            raise DimensionError(f"filter length {self.filters.shape[1]} must be < d={self.d}")
        if self.pooling not in ("mean", "none"):
            raise ValueError("pooling must be 'mean' or 'none'")
        self.head = np.asarray(self.head, dtype=float).reshape(self.channels, -1)
        expected = 1 if self.pooling == "mean" else self.positions
        if self.head.shape[1] != expected:
            raise DimensionError(f"head needs {expected} weights per channel, got {self.head.shape[1]}")
        self.head_bias = float(self.head_bias)
        if self.conv_bias is not None:
            self.conv_bias = np.asarray(self.conv_bias, dtype=float).reshape(self.channels)

    @classmethod
    def init(cls, d, l, channels=1, seed=0, pooling="mean", circular=False, activation="relu", bias=True):
        rng = np.random.default_rng(seed)
        k = d if circular else d - l + 1
        per = 1 if pooling == "mean" else k
        return cls(
            filters=rng.standard_normal((channels, l)) / math.sqrt(l),
            head=rng.standard_normal((channels, per)) / math.sqrt(channels * per),
            head_bias=0.0,
            d=d,
            pooling=pooling,
            circular=circular,
            activation=activation,
            conv_bias=rng.standard_normal(channels) if bias else None,
        )

    @property
    def channels(self) -> int:
        return self.filters.shape[0]

    @property
    def l(self) -> int:
        return self.filters.shape[1]

    @property
    def positions(self) -> int:
        return self.d if self.circular else self.d - self.l + 1

    @property
    def width(self) -> int:
        return self.channels

    def param_count(self) -> int:
        per = 1 if self.pooling == "mean" else self.d - self.l + 1
        if self.circular and self.pooling == "none":
            per = self.d
        bias = 0 if self.conv_bias is None else self.channels
        return self.channels * (self.l + per) + bias + 1

    def get_params(self) -> np.ndarray:
        parts = [self.filters.ravel(), self.head.ravel(), [self.head_bias]]
        if self.conv_bias is not None:
            parts.append(self.conv_bias)
        return np.concatenate(parts)

    def set_params(self, theta: np.ndarray) -> "CNN1D":
        C, l = self.filters.shape
        i = C * l
        filters = theta[:i].reshape(C, l)
        hs = self.head.size
        head = theta[i : i + hs].reshape(self.head.shape)
        i += hs
        head_bias = float(theta[i])
        conv_bias = theta[i + 1 : i + 1 + C].copy() if self.conv_bias is not None else None
        return replace(self, filters=filters.copy(), head=head.copy(), head_bias=head_bias, conv_bias=conv_bias)

    def windows(self, X: np.ndarray) -> np.ndarray:
        """Sliding windows, shape ``(n, positions, l)``."""
        idx = np.arange(self.positions)[:, None] + np.arange(self.l)[None, :]
        if self.circular:
            idx %= self.d
        return X[:, idx]

    def conv(self, x) -> np.ndarray:
        """Raw convolution outputs ``(n, channels, positions)`` before activation."""
        X, single = _as_batch(x, self.d)
        y = np.einsum("nkl,cl->nck", self.windows(X), self.filters)
        if self.conv_bias is not None:
            y = y + self.conv_bias[None, :, None]
        return y[0] if single else y

    def _features(self, X):
        pre = self.conv(X)
        h = activation(self.activation)[0](pre)
        feats = h.mean(axis=2, keepdims=True) if self.pooling == "mean" else h
        return pre, feats

    def forward(self, x):
        X, single = _as_batch(x, self.d)
        _, feats = self._features(X)
        out = np.einsum("nck,ck->n", feats, self.head) + self.head_bias
        return out[0] if single else out

    def loss_and_grad(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        n = X.shape[0]
        pre, feats = self._features(X)
        r = np.einsum("nck,ck->n", feats, self.head) + self.head_bias - y
        loss = float(np.mean(r * r))
        g_out = 2.0 * r / n
        g_head = np.einsum("n,nck->ck", g_out, feats)
        g_hb = g_out.sum()
        g_feat = g_out[:, None, None] * self.head[None, :, :]
        if self.pooling == "mean":
            g_h = np.broadcast_to(g_feat / self.positions, pre.shape)
        else:
            g_h = g_feat
        g_pre = g_h * activation(self.activation)[1](pre)
        g_filters = np.einsum("nck,nkl->cl", g_pre, self.windows(X))
        parts = [g_filters.ravel(), g_head.ravel(), [g_hb]]
        if self.conv_bias is not None:
            parts.append(g_pre.sum(axis=(0, 2)))
        return loss, np.concatenate(parts)


Network = FCN | CVNN | CNN1D


def forward(net: Network, x):
    return net.forward(x)


def param_count(net: Network) -> int:
    return net.param_count()


def circular_shift(x, k: int) -> np.ndarray:
    return np.roll(np.asarray(x), k, axis=-1)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    step_size: float = 0.05
    max_epochs: int = 2000
    batch: int = 0  # 0 or >= n means full batch
    seed: int = 0
    loss_tolerance: float = 0.0
    step_growth: float = 1.05
    min_step: float = 1e-12
    optimizer: str = "gd"  # "gd" or "adam" (diagonally preconditioned steps)
    monotone: bool = True

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")


@dataclass
class TrainResult:
    net: Network
    loss_curve: list[float]
    restarts: list[int] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.loss_curve) - 1

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]


def mse(net: Network, X, y) -> float:
    out = net.forward(X)
    return float(np.mean(np.sum(np.abs(np.reshape(out - np.reshape(y, np.shape(out)), (len(X), -1))) ** 2, axis=1)))


class _Adam:
    """Running first/second moment estimates turning a gradient into a preconditioned direction."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def reset(self):
        self.m[:] = 0.0
        self.v[:] = 0.0
        self.t = 0

    def direction(self, g):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


def train(net: Network, X, y, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Gradient descent with step halving on loss increase.

    Every epoch is tentative: if the full-data loss went up, the parameters
    roll back to the start of the epoch, the step is halved and the epoch
    index is recorded in ``restarts``. Accepted epochs grow the step by
    ``step_growth``. The loss curve is therefore non-increasing.
    """
    X = np.asarray(X)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("dataset is empty")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    n = len(X)
    rng = np.random.default_rng(cfg.seed)
    theta = net.get_params()
    loss, grad = net.loss_and_grad(X, y)
    if not math.isfinite(loss):
        raise TrainingError(0, "non-finite initial loss")
    curve = [loss]
    restarts: list[int] = []
    step = cfg.step_size
    full_batch = cfg.batch <= 0 or cfg.batch >= n
    adam = _Adam(theta.size) if cfg.optimizer == "adam" else None
    best = (loss, net)
    for epoch in range(1, cfg.max_epochs + 1):
        if loss <= cfg.loss_tolerance:
            break
        if full_batch:
            direction = adam.direction(grad) if adam else grad
            cand = net.set_params(theta - step * direction)
        else:
            cand = net
            for idx in np.array_split(rng.permutation(n), max(1, n // cfg.batch)):
                _, g_b = cand.loss_and_grad(X[idx], y[idx])
                direction = adam.direction(g_b) if adam else g_b
                cand = cand.set_params(cand.get_params() - step * direction)
        new_loss, new_grad = cand.loss_and_grad(X, y)
        if not math.isfinite(new_loss):
            if not cfg.monotone or step <= cfg.min_step:
                raise TrainingError(epoch)
        if not cfg.monotone:
            if new_loss > loss:
                restarts.append(epoch)
            net, theta, loss, grad = cand, cand.get_params(), new_loss, new_grad
            if loss < best[0]:
                best = (loss, net)
            curve.append(loss)
            continue
        if math.isfinite(new_loss) and new_loss <= loss:
            net, theta, loss, grad = cand, cand.get_params(), new_loss, new_grad
            step *= cfg.step_growth
        else:
            if adam:
                # momentum need not point downhill; restart from plain scaled gradient
                adam.reset()
            restarts.append(epoch)
            step *= 0.5
            if step < cfg.min_step:
                break
        curve.append(loss)
    if not cfg.monotone:
        net = best[1]
        curve.append(best[0])
    return TrainResult(net=net, loss_curve=curve, restarts=restarts)


# ---------------------------------------------------------------------------
# width sweeps
# ---------------------------------------------------------------------------


def make_network(arch: str, d: int, width: int, seed=0, **opts) -> Network:
    if arch == "cvnn":
        return CVNN.init(d, width, seed=seed, **opts)
    if arch == "fcn":
        return FCN.init(d, width, seed=seed, **opts)
    if arch == "cnn":
        opts = dict(opts)
        l = opts.pop("l", max(2, d // 4))
        return CNN1D.init(d, l, channels=width, seed=seed, **opts)
    raise ValueError(f"unknown architecture {arch!r}")


@dataclass(frozen=True)
class SweepCell:
    arch: str
    width: int
    param_count: int
    seed: int
    train_mse: float
    test_mse: float
    epochs: int
    valid: bool


@dataclass
class SweepResult:
    cells: list[SweepCell]

    CSV_COLUMNS = ("arch", "width", "param_count", "seed", "train_mse", "test_mse", "epochs", "valid")

    def widths(self) -> list[int]:
        return sorted({c.width for c in self.cells})

    def median_by_width(self) -> dict[int, float]:
        out = {}
        for w in self.widths():
            vals = [c.test_mse for c in self.cells if c.width == w and c.valid]
            out[w] = float(np.median(vals)) if vals else float("nan")
        return out

    def loglog_slope(self) -> float:
        med = self.median_by_width()
        w = np.array([k for k, v in med.items() if np.isfinite(v) and v > 0], dtype=float)
        v = np.array([med[int(k)] for k in w])
        if len(w) < 2:
            return float("nan")
        return float(np.polyfit(np.log(w), np.log(v), 1)[0])

    def is_non_increasing(self, rel_tol: float = 0.0) -> bool:
        vals = list(self.median_by_width().values())
        return all(b <= a * (1.0 + rel_tol) for a, b in zip(vals, vals[1:]))

    def rows(self) -> list[list]:
        return [
            [c.arch, c.width, c.param_count, c.seed, f"{c.train_mse:.10g}", f"{c.test_mse:.10g}", c.epochs, int(c.valid)]
            for c in self.cells
        ]


def run_cell(arch, width, seed, data, cfg: TrainConfig, net_opts=None) -> SweepCell:
    X_tr, y_tr, X_te, y_te = data
    net = make_network(arch, X_tr.shape[1], width, seed=seed, **(net_opts or {}))
    try:
        res = train(net, X_tr, y_tr, replace(cfg, seed=seed))
        test = mse(res.net, X_te, y_te)
        return SweepCell(arch, width, net.param_count(), seed, res.final_loss, test, res.epochs, math.isfinite(test))
    except (TrainingError, FloatingPointError):
        return SweepCell(arch, width, net.param_count(), seed, float("nan"), float("nan"), 0, False)


def width_sweep(
    target: Callable[[np.ndarray], np.ndarray],
    sampler: Callable[[int, int], np.ndarray],
    arch: str,
    widths: Sequence[int],
    seeds: Sequence[int],
    cfg: TrainConfig,
    n_train: int = 2000,
    n_test: int = 4000,
    data_seed: int = 0,
    net_opts: dict | None = None,
    map_fn=map,
) -> SweepResult:
    """Train one network per (width, seed) cell and record test error.

    ``sampler(n, seed)`` draws inputs; the train/test sets are shared across
    all cells so that cells differ only in width and initialization seed.
    ``map_fn`` lets callers fan cells out over a process pool.
    """
    widths = list(widths)
    if len(widths) < 3 or len(seeds) < 3:
        raise ValueError("need at least 3 widths and 3 seeds")
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be strictly increasing")
    X_tr = sampler(n_train, data_seed)
    X_te = sampler(n_test, data_seed + 1)
    data = (X_tr, target(X_tr), X_te, target(X_te))
    jobs = [(arch, w, s, data, cfg, net_opts) for w in widths for s in seeds]
    cells = list(map_fn(_run_cell_star, jobs))
    return SweepResult(cells)


def _run_cell_star(args):
    return run_cell(*args)
