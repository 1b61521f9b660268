"""Shell-indicator target families and their Lipschitz surrogates.

A :class:`RadialTarget` is a signed sum of interval indicators of ``||x||``
over ``N`` equal-width intervals tiling the shell
``C2*sqrt(d) <= ||x|| < 2*C2*sqrt(d)``. The same construction applied to a
shift-invariant scalar feature of ``x`` gives the translation-invariant
targets used by the convolutional experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

MODES = ("tent_corrected", "paper_literal")


class TargetError(ValueError):
    pass


def make_intervals(d: int, C2: float, N: int) -> list[tuple[float, float]]:
    """Half-open intervals ``[(1+(i-1)/N) r0, (1+i/N) r0)`` with ``r0 = C2*sqrt(d)``."""
    if N < 1:
        raise TargetError(f"N must be >= 1, got {N}")
    if not (0.0 < C2 < d):
        raise TargetError(f"need 0 < C2 < d, got C2={C2}, d={d}")
    r0 = C2 * math.sqrt(d)
    return [((1.0 + (i - 1) / N) * r0, (1.0 + i / N) * r0) for i in range(1, N + 1)]


def default_interval_count(d: int, C2: float) -> int:
    """Smallest integer ``N >= 4 * C2**2.5 * d**2``."""
    return int(math.ceil(4.0 * C2**2.5 * d**2 - 1e-9))


def make_betas(N: int, pattern: str = "alternating", seed: int = 0) -> tuple[int, ...]:
    if pattern == "alternating":
        return tuple(1 if i % 2 == 0 else -1 for i in range(N))
    if pattern == "random":
        rng = np.random.default_rng(seed)
        return tuple(int(b) for b in rng.choice([-1, 1], size=N))
    if pattern == "ones":
        return (1,) * N
    raise TargetError(f"unknown beta pattern {pattern!r}")


@dataclass(frozen=True)
class RadialTarget:
    d: int
    C2: float
    N: int
    betas: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.betas) != self.N:
            raise TargetError(f"expected {self.N} signs, got {len(self.betas)}")
        if any(b not in (-1, 1) for b in self.betas):
            raise TargetError("betas must be +1 or -1")
        make_intervals(self.d, self.C2, self.N)

    @classmethod
    def build(cls, d, C2=1.0, N=None, pattern="alternating", seed=0) -> "RadialTarget":
        if N is None:
            N = default_interval_count(d, C2)
        return cls(d=d, C2=float(C2), N=int(N), betas=make_betas(N, pattern, seed), seed=seed)

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return make_intervals(self.d, self.C2, self.N)

    @property
    def r_inner(self) -> float:
        return self.C2 * math.sqrt(self.d)

    @property
    def r_outer(self) -> float:
        return 2.0 * self.C2 * math.sqrt(self.d)

    @property
    def width(self) -> float:
        return self.r_inner / self.N

    def interval_index(self, r) -> np.ndarray:
        """Index of the interval containing each radius, ``-1`` outside the shell."""
        r = np.asarray(r, dtype=float)
        edges = np.array([lo for lo, _ in self.intervals] + [self.intervals[-1][1]])
        idx = np.searchsorted(edges, r, side="right") - 1
        return np.where((idx >= 0) & (idx < self.N), idx, -1)

    def eval_radius(self, r) -> np.ndarray:
        idx = self.interval_index(r)
        betas = np.asarray(self.betas, dtype=float)
        return np.where(idx >= 0, betas[np.clip(idx, 0, self.N - 1)], 0.0)

    def to_text(self, mode: str | None = None) -> str:
        return dump_kv(self, mode=mode)


def _check_dim(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise TargetError(f"expected input dimension {d}, got {x.shape[-1]}")
    return x


def eval_radial(g: RadialTarget, x) -> np.ndarray | float:
    """``beta_i`` when ``||x||`` lies in the i-th interval, else 0 (batched over leading axes)."""
    x = _check_dim(x, g.d)
    out = g.eval_radius(np.linalg.norm(x, axis=-1))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LipschitzSurrogate:
    target: RadialTarget
    mode: str = "tent_corrected"
    B: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise TargetError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.B is not None and len(self.B) != self.target.N:
            raise TargetError("B must have one entry per interval")

    @property
    def d(self) -> int:
        return self.target.d

    @property
    def indicators(self) -> np.ndarray:
        if self.B is None:
            return np.ones(self.target.N)
        return np.asarray(self.B, dtype=float)

    def branch(self, r) -> np.ndarray:
        """Per-interval branch values ``h_i``, shape ``r.shape + (N,)``."""
        g = self.target
        r = np.asarray(r, dtype=float)[..., None]
        lo = np.array([a for a, _ in g.intervals])
        hi = np.array([b for _, b in g.intervals])
        if self.mode == "paper_literal":
            inside = ((r >= lo) & (r < hi)).astype(float)
            dist_end = np.minimum(np.abs(r - lo), np.abs(r - hi))
            return np.maximum(inside, g.N * dist_end) * self.indicators
        dist = np.maximum(np.maximum(lo - r, r - hi), 0.0)
        return np.clip(1.0 - g.N * dist, 0.0, 1.0) * self.indicators

    def eval_radius(self, r) -> np.ndarray:
        h = self.branch(r) @ np.asarray(self.target.betas, dtype=float)
        if self.mode == "tent_corrected":
            # overlapping same-sign tents would exceed 1; clipping keeps N-Lipschitz
            h = np.clip(h, -1.0, 1.0)
        return h


def eval_surrogate(h: LipschitzSurrogate, x) -> np.ndarray | float:
    x = _check_dim(x, h.target.d)
    out = h.eval_radius(np.linalg.norm(x, axis=-1))
    return float(out) if out.ndim == 0 else out


# -- sampling ----------------------------------------------------------------

def unit_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.standard_normal((n, d))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    norms[norms == 0.0] = 1.0
    return z / norms


def sample_shell_uniform(d: int, C2: float, n: int, seed=0) -> np.ndarray:
    """Uniform samples on ``C2*sqrt(d) <= ||x|| <= 2*C2*sqrt(d)``."""
    rng = np.random.default_rng(seed)
    r0 = C2 * math.sqrt(d)
    u = rng.random(n)
    r = (r0**d + u * ((2 * r0) ** d - r0**d)) ** (1.0 / d)
    return unit_directions(rng, n, d) * r[:, None]


@dataclass(frozen=True)
class ShellDensity:
    """Radial truncated-Gaussian density on the shell.

    Proportional to ``exp(-(||x|| - 1.5 r0)^2 / (r0^2 / 8))`` with
    ``r0 = C2*sqrt(d)``, zero outside ``[r0, 2 r0]``. The normalizing constant
    is computed by quadrature at construction time.
    """

    d: int
    C2: float
    normalization: float = field(init=False)
    _grid_points: int = 4097

    def __post_init__(self):
        r0 = self.r_inner
        radial_mass, _ = integrate.quad(self._radial_weight, r0, 2 * r0, epsabs=0, epsrel=1e-12)
        surface = 2.0 * math.pi ** (self.d / 2) / special.gamma(self.d / 2)
        object.__setattr__(self, "normalization", 1.0 / (surface * radial_mass))

    @property
    def r_inner(self) -> float:
        return self.C2 * math.sqrt(self.d)

    def _kernel(self, r):
        r0 = self.r_inner
        return np.exp(-((r - 1.5 * r0) ** 2) / (r0**2 / 8.0))

    def _radial_weight(self, r):
        return r ** (self.d - 1) * self._kernel(r)

    def density(self, x) -> np.ndarray:
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        inside = (r >= self.r_inner) & (r <= 2 * self.r_inner)
        return np.where(inside, self.normalization * self._kernel(r), 0.0)

    def sample_radii(self, n: int, rng: np.random.Generator) -> np.ndarray:
        r0 = self.r_inner
        grid = np.linspace(r0, 2 * r0, self._grid_points)
        w = self._radial_weight(grid)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        return np.interp(rng.random(n), cdf, grid)

    def sample(self, n: int, seed=0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        r = self.sample_radii(n, rng)
        return unit_directions(rng, n, self.d) * r[:, None]


def lemma_gap_bound(d: int, C2: float) -> float:
    """``3 / (C2^2 sqrt(d))``."""
    return 3.0 / (C2**2 * math.sqrt(d))


def surrogate_gap_mc(
    g: RadialTarget,
    h: LipschitzSurrogate,
    phi: ShellDensity | None = None,
    n_samples: int = 100_000,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Monte-Carlo estimate of ``integral (g - h)^2 phi^2 dx``.

    Samples are drawn from ``phi^2`` itself, so the estimator is the sample
    mean of ``(g - h)^2``. Both functions are radial, hence only radii are
    sampled.

    Returns
    -------
    (estimate, std_error, bound)
    """
    if n_samples < 1000:
        raise TargetError("n_samples must be >= 1000")
    if phi is None:
        phi = ShellDensity(g.d, g.C2)
    rng = np.random.default_rng(seed)
    r = phi.sample_radii(n_samples, rng)
    sq = (g.eval_radius(r) - h.eval_radius(r)) ** 2
    est = float(np.mean(sq))
    se = float(np.std(sq, ddof=1) / math.sqrt(n_samples))
    if not (math.isfinite(est) and math.isfinite(se)):
        raise TargetError("non-finite gap estimate")
    return est, se, lemma_gap_bound(g.d, g.C2)


# -- translation-invariant targets ---------------------------------------------

def centered_norm(x) -> np.ndarray:
    """``||x - mean(x) 1||``: invariant to uniform offsets and to coordinate permutations."""
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - x.mean(axis=-1, keepdims=True), axis=-1)


def eval_translation_target(
    g: RadialTarget, x, feature: Callable[[np.ndarray], np.ndarray] = centered_norm
) -> np.ndarray | float:
    x = _check_dim(x, g.d)
    out = g.eval_radius(feature(x))
    return float(out) if out.ndim == 0 else out


def sample_translation_shell(d: int, C2: float, n: int, seed=0, offset_scale: float = 1.0) -> np.ndarray:
    """Inputs whose centered norm is uniform-in-volume on the shell, plus a random offset ``eta * 1``."""
    rng = np.random.default_rng(seed)
    r0 = C2 * math.sqrt(d)
    z = rng.standard_normal((n, d))
    z -= z.mean(axis=1, keepdims=True)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    k = d - 1  # the centered vectors live in a (d-1)-dimensional subspace
    u = rng.random(n)
    r = (r0**k + u * ((2 * r0) ** k - r0**k)) ** (1.0 / k)
    eta = rng.uniform(-offset_scale, offset_scale, size=n)
    return z * r[:, None] + eta[:, None]


# -- plain-text key/value serialization --------------------------------------

def dump_kv(g: RadialTarget, mode: str | None = None) -> str:
    lines = [
        f"d = {g.d}",
        f"C2 = {g.C2!r}",
        f"N = {g.N}",
        "betas = " + ",".join("+1" if b > 0 else "-1" for b in g.betas),
    ]
    if mode is not None:
        lines.append(f"mode = {mode}")
    lines.append(f"seed = {g.seed}")
    return "\n".join(lines) + "\n"


def load_kv(text: str) -> tuple[RadialTarget, str | None]:
    """Inverse of :func:`dump_kv`; returns the target and the optional surrogate mode."""
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TargetError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in {"d", "C2", "N", "betas", "mode", "seed"}:
            raise TargetError(f"line {lineno}: unknown key {key!r}")
        fields[key] = value
    try:
        betas = tuple(int(b) for b in fields["betas"].split(","))
        g = RadialTarget(
            d=int(fields["d"]),
            C2=float(fields["C2"]),
            N=int(fields["N"]),
            betas=betas,
            seed=int(fields.get("seed", 0)),
        )
    except KeyError as exc:
        raise TargetError(f"missing key {exc.args[0]!r}") from None
    return g, fields.get("mode")
