"""Group actions on R^n and sampled invariance diagnostics.

Continuous groups cannot be enumerated, so a group is represented by a
finite sample of its elements and invariance is measured on sampled inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import comb

ORTHO_TOL = 1e-10
DET_TOL = 1e-8
UNIT_TOL = 1e-12

KINDS = ("permutation", "rotation", "translation")


class ActionError(ValueError):
    pass


class PreconditionError(ValueError):
    """A check was called with inputs that do not meet its assumptions."""


@dataclass(frozen=True, eq=False)
class GroupAction:
    """A permutation of coordinates, an SO(n) rotation, or a translation ``x + eta * dx``."""

    kind: str
    perm: tuple[int, ...] | None = None
    matrix: np.ndarray | None = None
    eta: float = 0.0
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "permutation":
            if self.perm is None or sorted(self.perm) != list(range(len(self.perm))):
                raise ActionError(f"not a bijection on [n]: {self.perm}")
        elif self.kind == "rotation":
            A = np.asarray(self.matrix, dtype=float)
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ActionError("rotation matrix must be square")
            if np.max(np.abs(A.T @ A - np.eye(len(A)))) > ORTHO_TOL:
                raise ActionError("rotation matrix is not orthogonal")
            if abs(np.linalg.det(A) - 1.0) > DET_TOL:
                raise ActionError("rotation matrix does not have determinant 1")
            object.__setattr__(self, "matrix", A)
        elif self.kind == "translation":
            dx = np.asarray(self.direction, dtype=float)
            if dx.ndim != 1 or abs(np.linalg.norm(dx) - 1.0) > UNIT_TOL:
                raise ActionError("translation direction must be a unit vector")
            object.__setattr__(self, "direction", dx)
            object.__setattr__(self, "eta", float(self.eta))
        else:
            raise ActionError(f"unknown action kind {self.kind!r}")

    @classmethod
    def permutation(cls, perm: Sequence[int]) -> "GroupAction":
        """Coordinate permutation; ``perm`` is zero-based, ``(Tx)_i = x_{perm[i]}``."""
        return cls("permutation", perm=tuple(int(p) for p in perm))

    @classmethod
    def rotation(cls, A) -> "GroupAction":
        return cls("rotation", matrix=np.asarray(A, dtype=float))

    @classmethod
    def translation(cls, eta: float, direction) -> "GroupAction":
        return cls("translation", eta=eta, direction=np.asarray(direction, dtype=float))

    @property
    def dim(self) -> int:
        if self.kind == "permutation":
            return len(self.perm)
        if self.kind == "rotation":
            return self.matrix.shape[0]
        return self.direction.shape[0]

    def __call__(self, x):
        return apply_action(self, x)

    def inverse(self) -> "GroupAction":
        if self.kind == "permutation":
            inv = np.empty(self.dim, dtype=int)
            inv[list(self.perm)] = np.arange(self.dim)
            return GroupAction.permutation(inv)
        if self.kind == "rotation":
            return GroupAction.rotation(self.matrix.T)
        return GroupAction.translation(self.eta, -self.direction)

    def compose(self, other: "GroupAction") -> "GroupAction":
        """``self o other`` (apply ``other`` first); defined within one kind."""
        if self.kind != other.kind or self.dim != other.dim:
            raise ActionError("can only compose actions of the same kind and dimension")
        if self.kind == "permutation":
            # (S(T x))_i = (T x)_{s_i} = x_{t_{s_i}}
            return GroupAction.permutation([other.perm[p] for p in self.perm])
        if self.kind == "rotation":
            return GroupAction.rotation(self.matrix @ other.matrix)
        total = self.eta * self.direction + other.eta * other.direction
        norm = float(np.linalg.norm(total))
        if norm == 0.0:
            return GroupAction.translation(0.0, self.direction)
        return GroupAction.translation(norm, total / norm)


def apply_action(a: GroupAction, x) -> np.ndarray:
    """Apply ``a`` to a vector or to each row of a batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != a.dim:
        raise ActionError(f"action acts on R^{a.dim} but x has dimension {x.shape[-1]}")
    if a.kind == "permutation":
        return x[..., list(a.perm)]
    if a.kind == "rotation":
        return x @ a.matrix.T
    return x + a.eta * a.direction


def haar_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed element of SO(dim): QR of a Gaussian matrix, sign-fixed, det-corrected."""
    z = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def sample_action(kind: str, dim: int, rng_seed=None, eta_scale: float = 1.0) -> GroupAction:
    if dim < 1:
        raise ActionError("dim must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if kind == "permutation":
        return GroupAction.permutation(rng.permutation(dim))
    if kind == "rotation":
        return GroupAction.rotation(haar_rotation(dim, rng))
    if kind == "translation":
        dx = rng.standard_normal(dim)
        dx /= np.linalg.norm(dx)
        return GroupAction.translation(eta_scale * rng.standard_normal(), dx)
    raise ActionError(f"unknown action kind {kind!r}")


def sample_actions(kind: str, dim: int, count: int, seed=0) -> list[GroupAction]:
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [sample_action(kind, dim, np.random.default_rng(s)) for s in seeds]


# ---------------------------------------------------------------------------
# invariance defects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DefectReport:
    sup_defect: float
    l2_defect: float
    samples: int
    seed: int
    l2_std_error: float = 0.0


Sampler = Callable[[int, np.random.Generator], np.ndarray]


def gaussian_sampler(dim: int) -> Sampler:
    return lambda n, rng: rng.standard_normal((n, dim))


def _evaluate(f, X: np.ndarray, what: str) -> np.ndarray:
    try:
        out = np.asarray(f(X), dtype=float)
    except (TypeError, ValueError):
        out = None
    if out is None or out.shape != (len(X),):
        # scalar-only function: evaluate row by row
        out = np.array([float(f(x)) for x in X])
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise ValueError(f"non-finite output of {what} at sample {int(bad[0])}: x={X[bad[0]].tolist()}")
    return out


def invariance_defect(f, actions: Sequence[GroupAction], sampler: Sampler, n_samples: int, seed: int = 0) -> DefectReport:
    """Largest and root-mean-square ``|f(tau(x)) - f(x)|`` over samples and actions."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not actions:
        raise ValueError("need at least one action")
    rng = np.random.default_rng(seed)
    X = sampler(n_samples, rng)
    base = _evaluate(f, X, "f")
    diffs = np.concatenate([_evaluate(f, apply_action(a, X), "f o tau") - base for a in actions])
    sq = diffs**2
    l2 = float(math.sqrt(np.mean(sq)))
    se = float(np.std(sq, ddof=1) / math.sqrt(sq.size) / (2 * l2)) if l2 > 0 and sq.size > 1 else 0.0
    return DefectReport(float(np.max(np.abs(diffs))), l2, n_samples, seed, se)


@dataclass(frozen=True)
class ClosureCheck:
    passed: bool
    invariance_gap: float  # max over actions of rms(f o tau - f)
    bound: float  # 2 eps + tol
    fit_error: float  # max over evaluated point sets of rms(f - g_eps)
    g_defect: float

    def __bool__(self):
        return self.passed


def closure_bound_check(
    f,
    g_eps,
    eps: float,
    actions: Sequence[GroupAction],
    sampler: Sampler,
    n_samples: int,
    seed: int = 0,
    tol: float = 1e-6,
    g_tol: float = 1e-9,
) -> ClosureCheck:
    """Check ``||f o tau - f|| <= 2 eps + tol`` given an invariant ``g_eps`` within ``eps`` of ``f``.

    Norms are root-mean-square over sampled points. The closeness
    precondition is verified both on the samples and on their images under
    every action, which are the point sets the triangle inequality uses.

    Raises
    ------
    PreconditionError
        If ``g_eps`` is not invariant (sup defect > ``g_tol``) or is farther
        than ``eps`` from ``f`` on any of the point sets.
    """
    if eps < 0:
        raise PreconditionError("eps must be non-negative")
    rng = np.random.default_rng(seed)
    X = sampler(n_samples, rng)
    point_sets = [X] + [apply_action(a, X) for a in actions]
    fv = [_evaluate(f, P, "f") for P in point_sets]
    gv = [_evaluate(g_eps, P, "g_eps") for P in point_sets]
    g_defect = max(float(np.max(np.abs(g - gv[0]))) for g in gv[1:])
    if g_defect > g_tol:
        raise PreconditionError(f"g_eps is not invariant: sup defect {g_defect:.3e} > {g_tol:.1e}")
    fit = max(float(np.sqrt(np.mean((a - b) ** 2))) for a, b in zip(fv, gv))
    if fit > eps * (1 + 1e-12) + 1e-15:
        raise PreconditionError(f"sampled ||f - g_eps|| = {fit:.6g} exceeds eps = {eps:.6g}")
    gap = max(float(np.sqrt(np.mean((ft - fv[0]) ** 2))) for ft in fv[1:])
    bound = 2 * eps + tol
    return ClosureCheck(gap <= bound, gap, bound, fit, g_defect)


# ---------------------------------------------------------------------------
# l-finiteness
# ---------------------------------------------------------------------------


def finite_difference(sigma, x: np.ndarray, l: int, h: float) -> np.ndarray:
    """Central ``l``-th difference ``h^-l sum_k (-1)^k C(l,k) sigma(x + (l/2 - k) h)``."""
    total = np.zeros_like(x, dtype=float)
    for k in range(l + 1):
        total += (-1) ** k * comb(l, k, exact=True) * np.asarray(sigma(x + (l / 2 - k) * h), dtype=float)
    return total / h**l


def check_l_finite(
    sigma,
    l: int,
    half_range: float = 20.0,
    grid: int = 20_000,
    tail_tol: float = 1e-3,
    zero_tol: float = 1e-6,
) -> tuple[bool, float]:
    """Numerical test of ``0 < |int D^l sigma| < inf``.

    The integral is truncated to ``[-half_range, half_range]`` and computed by
    the trapezoid rule on central differences with step
    ``h = max(1e-4, half_range / grid)``. Finiteness on the real line is
    inferred from the tails: ``|D^l sigma|`` at both ends must be below
    ``tail_tol`` times its peak. A zero integral (relative to
    ``int |D^l sigma|``) also fails.
    """
    if l < 1:
        raise ValueError("l must be >= 1")
    if not half_range > 0:
        raise ValueError("half_range must be positive")
    h = max(1e-4, half_range / grid)
    xs = np.linspace(-half_range, half_range, int(round(2 * half_range / h)) + 1)
    dl = finite_difference(sigma, xs, l, h)
    if not np.all(np.isfinite(dl)):
        raise ValueError("non-finite derivative estimate")
    trap = getattr(np, "trapezoid", None) or np.trapz
    integral = float(trap(dl, xs))
    mass = float(trap(np.abs(dl), xs))
    peak = float(np.max(np.abs(dl)))
    tails_decay = peak > 0 and max(abs(dl[0]), abs(dl[-1])) <= tail_tol * peak
    nonzero = mass > 0 and abs(integral) > zero_tol * mass
    return bool(tails_decay and nonzero), integral
