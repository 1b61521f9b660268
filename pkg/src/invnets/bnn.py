"""Gaussian belief algebra for linear units and a layerwise Bayesian training loop.

The likelihood of a single observation ``y = (1/d) w^T x + noise`` only
constrains ``w`` along ``x``; the ``d - 1`` directions spanned by a
:class:`TranslationBasis` leave it unchanged. Inflating a Gaussian along
those directions and taking the limit of infinite inflation recovers the
exact rank-one likelihood precision.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .networks import ACTIVATIONS
from .numerics import ContractError, RankDeficientError, spd_inverse, symmetrize

SYM_TOL = 1e-10
PSD_TOL = 1e-9


class MomentError(ArithmeticError):
    """Non-finite moments produced inside :func:`layerwise_iterate`."""

    def __init__(self, layer: int, iteration: int, what: str):
        super().__init__(f"non-finite {what} at layer {layer}, iteration {iteration}")
        self.layer = layer
        self.iteration = iteration


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ContractError(f"cov shape {cov.shape} does not match mean of size {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov), initial=0.0)))
        if np.max(np.abs(cov - cov.T), initial=0.0) > SYM_TOL * scale:
            raise ContractError("covariance is not symmetric")
        cov = symmetrize(cov)
        if mean.size and np.min(np.linalg.eigvalsh(cov)) < -PSD_TOL * scale:
            raise ContractError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def isotropic(cls, d: int, var: float = 1.0, mean=None) -> "GaussianBelief":
        return cls(np.zeros(d) if mean is None else mean, var * np.eye(d))

    def precision(self) -> np.ndarray:
        try:
            return spd_inverse(self.cov, "covariance")
        except ContractError as exc:
            raise ContractError("singular covariance") from exc


@dataclass(frozen=True, eq=False)
class PrecisionBelief:
    """Gaussian in information form; ``cov`` is ``None`` when the precision is singular."""

    mean: np.ndarray
    precision: np.ndarray
    cov: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class TranslationBasis:
    B: np.ndarray
    anchor: np.ndarray
    pivot: int

    @property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.B, compute_uv=False)

    @property
    def eta(self) -> float:
        """Smallest singular value (``>= 1`` by construction)."""
        return float(self.singular_values[-1])


def build_translation_basis(x) -> TranslationBasis:
    """Basis of ``{v : v^T x = 0}``: identity on all coordinates but the pivot.

    The pivot is the largest-magnitude coordinate (the last one on ties), so
    the textbook construction that divides by ``x_d`` is used whenever
    ``|x_d|`` is maximal.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ContractError("anchor must be a vector of length >= 2")
    if not np.all(np.isfinite(x)):
        raise ContractError("anchor has non-finite entries")
    if not np.any(x):
        raise ContractError("anchor must be nonzero")
    d = x.size
    mags = np.abs(x)
    pivot = int(d - 1 - np.argmax(mags[::-1]))
    others = [i for i in range(d) if i != pivot]
    B = np.zeros((d, d - 1))
    B[others, np.arange(d - 1)] = 1.0
    B[pivot] = -x[others] / x[pivot]
    return TranslationBasis(B, x.copy(), pivot)


def _information_product(m1, P1, m2, P2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    P = symmetrize(P1 + P2)
    cov = spd_inverse(P, "combined precision")
    mean = cov @ (P1 @ m1 + P2 @ m2)
    return mean, symmetrize(cov), P


def gaussian_product(q, p) -> GaussianBelief:
    """Normalized product of two Gaussian densities.

    ``q`` may be a :class:`PrecisionBelief` with singular precision as long
    as the combined precision is positive definite.
    """
    if np.asarray(q.mean).size != np.asarray(p.mean).size:
        raise ContractError("dimension mismatch")
    Pq = q.precision() if isinstance(q, GaussianBelief) else q.precision
    Pp = p.precision() if isinstance(p, GaussianBelief) else p.precision
    mean, cov, _ = _information_product(q.mean, Pq, p.mean, Pp)
    return GaussianBelief(mean, cov)


def woodbury_inverse(Sigma, B, beta: float) -> np.ndarray:
    """``(Sigma + beta^2 B B^T)^-1`` via the Woodbury identity."""
    S_inv = spd_inverse(Sigma, "Sigma")
    if beta == 0:
        return S_inv
    SB = S_inv @ B
    core = np.eye(B.shape[1]) / beta**2 + B.T @ SB
    return symmetrize(S_inv - SB @ np.linalg.solve(core, SB.T))


def marginal_over_subspace(q: GaussianBelief, B, beta: float) -> PrecisionBelief:
    """Inflate ``q`` by ``beta^2 B B^T``; ``beta = inf`` gives the degenerate limit precision."""
    B = B.B if isinstance(B, TranslationBasis) else np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != q.dim:
        raise ContractError("basis rows must match belief dimension")
    rank = int(np.linalg.matrix_rank(B))
    if rank < B.shape[1]:
        raise RankDeficientError(rank, B.shape[1])
    if beta < 0:
        raise ContractError("beta must be non-negative")
    if math.isinf(beta):
        S_inv = q.precision()
        SB = S_inv @ B
        prec = symmetrize(S_inv - SB @ np.linalg.solve(B.T @ SB, SB.T))
        return PrecisionBelief(q.mean.copy(), prec, None)
    cov = symmetrize(q.cov + beta**2 * B @ B.T)
    return PrecisionBelief(q.mean.copy(), woodbury_inverse(q.cov, B, beta), cov)


def pseudo_likelihood(x, y: float, noise_var: float) -> GaussianBelief:
    """Isotropic Gaussian in ``w`` centred on the minimum-norm solution of ``(1/d) w^T x = y``."""
    x = np.asarray(x, dtype=float)
    d = x.size
    sq = float(x @ x)
    return GaussianBelief(d * y * x / sq, (d**2 * noise_var / sq) * np.eye(d))


def linear_posterior(x, y: float, noise_var: float, prior: GaussianBelief, beta: float = math.inf) -> GaussianBelief:
    """Posterior over ``w`` for one observation of ``y = (1/d) w^T x + N(0, noise_var)``.

    At ``beta = inf`` this is the exact Bayes posterior; finite ``beta``
    keeps part of the isotropic pseudo-likelihood spread along directions
    orthogonal to ``x``.
    """
    if not noise_var > 0:
        raise ContractError("noise_var must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape != prior.mean.shape:
        raise ContractError("x does not match prior dimension")
    if not np.any(x):
        return GaussianBelief(prior.mean.copy(), prior.cov.copy())
    q = pseudo_likelihood(x, y, noise_var)
    lik = marginal_over_subspace(q, build_translation_basis(x), beta)
    return gaussian_product(lik, prior)


def batch_linear_posterior(X, y, noise_var: float, prior: GaussianBelief) -> GaussianBelief:
    """Exact posterior for a dataset, in one information-form update."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    d = prior.dim
    P0 = prior.precision()
    P = X.T @ X / (d**2 * noise_var)
    h = X.T @ y / (d * noise_var)
    cov = spd_inverse(symmetrize(P0 + P), "posterior precision")
    return GaussianBelief(cov @ (P0 @ prior.mean + h), symmetrize(cov))


def kl_divergence(q0: GaussianBelief, q1: GaussianBelief) -> float:
    """``KL[q0 || q1]``, computed from the eigenvalues of ``Sigma1^-1 (Sigma0 - Sigma1)``."""
    P1 = q1.precision()
    diff = q0.mean - q1.mean
    delta = np.linalg.eigvals(P1 @ (q0.cov - q1.cov)).real
    cov_term = float(np.sum(delta - np.log1p(delta)))
    return 0.5 * (cov_term + float(diff @ P1 @ diff))


# ---------------------------------------------------------------------------
# layerwise iteration
# ---------------------------------------------------------------------------


@dataclass
class LayerState:
    layer_index: int
    weight_belief: list[GaussianBelief]
    activation_samples: np.ndarray  # (mc_budget, n, width)


@dataclass
class LayerwiseTrace:
    per_layer: np.ndarray  # (T, L)
    widths: tuple[int, ...]

    @property
    def total(self) -> np.ndarray:
        return self.per_layer.sum(axis=1)

    def to_csv(self, burn_in: int = 0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "layer", "kl_delta", "alpha_running"])
        total = self.total
        for t in range(len(total)):
            for l in range(self.per_layer.shape[1]):
                w.writerow([t + 1, l + 1, f"{self.per_layer[t, l]:.12g}", ""])
            alpha = ""
            seg = total[burn_in : t + 1]
            if seg.size >= 5 and np.all(seg > 0):
                alpha = f"{fit_geometric_rate(seg)[0]:.12g}"
            w.writerow([t + 1, "all", f"{total[t]:.12g}", alpha])
        return buf.getvalue()


@dataclass
class _Layer:
    means: np.ndarray  # (out, in)
    cov: np.ndarray  # (in, in), shared by all rows
    prec: np.ndarray

    def beliefs(self) -> list[GaussianBelief]:
        return [GaussianBelief(m, self.cov) for m in self.means]


def _row_kl(new: _Layer, old: _Layer) -> float:
    delta = np.linalg.eigvals(old.prec @ (new.cov - old.cov)).real
    cov_term = float(np.sum(delta - np.log1p(delta)))
    diff = new.means - old.means
    mean_term = float(np.einsum("ri,ij,rj->", diff, old.prec, diff))
    return 0.5 * (new.means.shape[0] * cov_term + mean_term)


def layerwise_iterate(
    data: tuple[np.ndarray, np.ndarray],
    depth: int,
    widths: Sequence[int] = (),
    T: int = 30,
    mc_budget: int = 64,
    seed: int = 0,
    noise_var: float = 0.5,
    prior_var: float = 1.0,
    activation: str = "tanh",
    damping: float = 0.5,
    backproject_reg: float = 10.0,
    min_slope: float = 0.05,
):
    """Layerwise Gaussian updates for an ``L``-layer network with a linear output unit.

    Layer ``l`` computes ``sigma(W^l z^{l-1} / d_{l-1})`` (identity on the
    output layer). Each iteration

    1. propagates ``mc_budget`` Monte-Carlo weight draws through the
       current beliefs (the same normal draws every iteration, so the loop is
       a deterministic map);
    2. forms targets top-down: the output layer targets ``y``; a hidden
       layer's pre-activation target comes from back-projecting the target
       above through the point estimate (posterior mean) of the next layer,
       followed by one Gauss-Newton step through the activation;
    3. for ``l = 1 .. L``, replaces ``q(W^l)`` by the exact Gaussian posterior
       of a linear regression of the targets on the sampled ``z^{l-1}``
       (each of the ``S`` samples carries noise ``S * noise_var``, so the
       data are counted once), rows independent, then damps the update in
       natural parameters toward the previous belief.

    At the first iteration the point estimates are a single draw from the
    prior and no damping is applied, so ``L = 1`` with identity activation
    returns the exact linear posterior after one iteration.

    Returns
    -------
    states : list of LayerState
    trace : LayerwiseTrace
        ``KL[q_t || q_{t-1}]`` per layer (summed over rows) for ``t = 1..T``.
    """
    if T < 1 or depth < 1:
        raise ValueError("need T >= 1 and depth >= 1")
    X, y = data
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(len(X), -1) if len(X) else np.zeros((0, 1))
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    if len(widths) != depth - 1:
        raise ValueError(f"need {depth - 1} hidden widths, got {len(widths)}")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    act, dact = ACTIVATIONS[activation]
    dims = [X.shape[1], *widths, y.shape[1]]
    n, S = X.shape[0], mc_budget
    rng = np.random.default_rng(seed)
    prior_prec = [np.eye(dims[l]) / prior_var for l in range(depth)]
    layers = [_Layer(np.zeros((dims[l + 1], dims[l])), prior_var * np.eye(dims[l]), prior_prec[l]) for l in range(depth)]
    crn = [rng.standard_normal((S, dims[l + 1], dims[l])) for l in range(depth)]
    point = [np.sqrt(prior_var) * rng.standard_normal((dims[l + 1], dims[l])) for l in range(depth)]

    def sample_weights(l: int) -> np.ndarray:
        chol = np.linalg.cholesky(layers[l].cov)
        return layers[l].means[None] + crn[l] @ chol.T

    def layer_out(l: int, z: np.ndarray):
        pre = np.einsum("sni,soi->sno", z, sample_weights(l)) / dims[l]
        return pre, (pre if l == depth - 1 else act(pre))

    def forward():
        zs, pres = [np.broadcast_to(X, (S, n, dims[0]))], []
        for l in range(depth):
            pre, z = layer_out(l, zs[-1])
            pres.append(pre)
            zs.append(z)
        return zs, pres

    trace = np.zeros((T, depth))
    for t in range(T):
        if n == 0:
            break
        zs, pres = forward()
        targets = [None] * depth
        targets[-1] = y
        for l in range(depth - 2, -1, -1):
            M = point[l + 1] / dims[l + 1]  # next layer acts as z -> M z
            zbar = zs[l + 1].mean(axis=0)
            abar = pres[l].mean(axis=0)
            resid = targets[l + 1] - zbar @ M.T
            lhs = M.T @ M + backproject_reg * np.eye(dims[l + 1])
            zt = zbar + np.linalg.solve(lhs, M.T @ resid.T).T
            slope = np.maximum(dact(abar), min_slope)
            targets[l] = abar + (zt - act(abar)) / slope

        z_in = zs[0]
        new_layers = []
        for l in range(depth):
            d_in = dims[l]
            second = np.einsum("sni,snj->ij", z_in, z_in) / S
            first = z_in.mean(axis=0)  # (n, d_in)
            P = symmetrize(prior_prec[l] + second / (d_in**2 * noise_var))
            h = first.T @ targets[l] / (d_in * noise_var)  # (d_in, out)
            if t > 0:
                old = layers[l]
                P = symmetrize((1 - damping) * old.prec + damping * P)
                h = (1 - damping) * (old.prec @ old.means.T) + damping * h
            cov = spd_inverse(P, "layer precision")
            means = (cov @ h).T
            if not (np.all(np.isfinite(means)) and np.all(np.isfinite(cov))):
                raise MomentError(l + 1, t + 1, "posterior moments")
            new = _Layer(means, symmetrize(cov), P)
            trace[t, l] = _row_kl(new, layers[l])
            new_layers.append(new)
            layers[l] = new
            _, z_in = layer_out(l, z_in)
            if not np.all(np.isfinite(z_in)):
                raise MomentError(l + 1, t + 1, "activation samples")
        point = [lay.means for lay in new_layers]

    zs, _ = forward()
    states = [LayerState(l + 1, layers[l].beliefs(), zs[l + 1]) for l in range(depth)]
    return states, LayerwiseTrace(trace, tuple(dims))


def fit_geometric_rate(trace) -> tuple[float, float]:
    """Least-squares fit of ``log trace_t`` against ``t``: returns ``(exp(-slope), r^2)``."""
    tr = np.asarray(trace, dtype=float)
    if tr.size < 5:
        raise ValueError("need at least 5 trace entries")
    if np.any(~(tr > 0)) or not np.all(np.isfinite(tr)):
        raise ValueError("trace entries must be positive and finite")
    t = np.arange(1, tr.size + 1, dtype=float)
    logs = np.log(tr)
    slope, icept = np.polyfit(t, logs, 1)
    ss_res = float(np.sum((logs - (slope * t + icept)) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 or ss_res <= 1e-30 * max(ss_tot, 1e-300) else 1.0 - ss_res / ss_tot
    return float(math.exp(-slope)), float(r2)
