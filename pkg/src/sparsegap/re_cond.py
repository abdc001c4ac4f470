"""Restricted-eigenvalue geometry.

The RE constant of ``X`` is the smallest value of ``||X theta||^2 / (n ||theta||^2)``
over the union of the cones ``C(S) = {||theta_Sbar||_1 <= 3 ||theta_S||_1}``
with ``|S| = k``. Computing it exactly is a nonconvex problem, so
:func:`re_upper_bound` reports the best value found by local descent; it is an
upper bound on the true constant and is sandwiched by two eigenvalue bounds
that are checked on every call.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numba
import numpy as np

from ._seeding import derive_rng
from .errors import BudgetExceeded, PreconditionError, ShapeError, ZeroVector

CONE_FACTOR = 3.0
DEFAULT_RESTARTS = 200
MAX_EXHAUSTIVE_SUPPORTS = 2000
DESCENT_GTOL = 1e-9
DESCENT_MAX_ITER = 5000
SCREEN_ITER = 40
REFINE_COUNT = 64
NORMALIZATION_BUDGET = 10**6
NORMALIZATION_SAMPLES = 10**4
NORMALIZATION_RTOL = 1e-12


@dataclass(frozen=True)
class ConeSpec:
    support: tuple[int, ...]
    factor: float = CONE_FACTOR

    def __post_init__(self):
        support = tuple(sorted(int(j) for j in self.support))
        if len(set(support)) != len(support) or not support:
            raise PreconditionError("cone support must be a nonempty set of indices")
        if self.factor != CONE_FACTOR:
            raise PreconditionError(f"cone factor is fixed at {CONE_FACTOR}")
        object.__setattr__(self, "support", support)

    @property
    def k(self) -> int:
        return len(self.support)


def in_cone(theta, spec: ConeSpec) -> bool:
    theta = np.asarray(theta, dtype=np.float64)
    mask = np.zeros(theta.size, dtype=bool)
    mask[list(spec.support)] = True
    on = np.abs(theta[mask]).sum()
    off = np.abs(theta[~mask]).sum()
    return bool(off <= spec.factor * on)


def rayleigh(X, theta) -> float:
    """``||X theta||^2 / (n ||theta||^2)``."""
    X = np.asarray(X, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    nt = float(theta @ theta)
    if nt == 0.0:
        raise ZeroVector("Rayleigh quotient of the zero vector")
    r = X @ theta
    return float(r @ r) / (X.shape[0] * nt)


@numba.njit(cache=True)
def _project_cone(v, mask, factor):
    """Euclidean projection of ``v`` onto the convex piece of ``C(S)`` that
    keeps the sign pattern of ``v`` on ``S``.

    With multiplier ``mu`` on the l1 constraint the projection moves every
    entry on ``S`` away from zero by ``factor * mu`` and soft-thresholds the
    rest at ``mu``; ``mu`` is the root of the resulting piecewise-linear
    equation, located exactly between consecutive sorted magnitudes.
    """
    d = v.shape[0]
    on = 0.0
    off = 0.0
    k_on = 0
    for j in range(d):
        if mask[j]:
            on += abs(v[j])
            k_on += 1
        else:
            off += abs(v[j])
    out = v.copy()
    if off <= factor * on:
        return out
    mags = np.empty(d - k_on)
    i = 0
    for j in range(d):
        if not mask[j]:
            mags[i] = abs(v[j])
            i += 1
    mags = np.sort(mags)[::-1]
    mu = 0.0
    partial = 0.0
    for j in range(mags.shape[0]):
        partial += mags[j]
        cand = (partial - factor * on) / (j + 1 + factor * factor * k_on)
        nxt = mags[j + 1] if j + 1 < mags.shape[0] else 0.0
        if cand >= nxt:
            mu = cand
            break
    on2 = 0.0
    off2 = 0.0
    for j in range(d):
        if mask[j]:
            sgn = 1.0 if v[j] >= 0.0 else -1.0
            out[j] = sgn * (abs(v[j]) + factor * mu)
            on2 += abs(out[j])
        else:
            a = abs(v[j]) - mu
            if a > 0.0:
                out[j] = a if v[j] > 0.0 else -a
                off2 += a
            else:
                out[j] = 0.0
    if off2 > factor * on2:
        scale = factor * on2 / off2 * (1.0 - 1e-15)
        for j in range(d):
            if not mask[j]:
                out[j] *= scale
    return out


@numba.njit(cache=True)
def _quad(G, x):
    d = x.shape[0]
    total = 0.0
    for i in range(d):
        row = 0.0
        for j in range(d):
            row += G[i, j] * x[j]
        total += x[i] * row
    return total


@numba.njit(cache=True)
def _descend(G, theta0, mask, factor, gtol, max_iter):
    """Projected gradient descent of the Rayleigh quotient on cone and sphere."""
    d = theta0.shape[0]
    theta = _project_cone(theta0, mask, factor)
    theta /= np.sqrt(theta @ theta)
    f = _quad(G, theta)
    bound = 0.0
    for i in range(d):
        row = 0.0
        for j in range(d):
            row += abs(G[i, j])
        if row > bound:
            bound = row
    eta = 1.0 / (2.0 * bound) if bound > 0.0 else 1.0
    it = 0
    for it in range(max_iter):
        grad = 2.0 * (G @ theta - f * theta)
        accepted = False
        cand = theta
        fc = f
        while eta > 1e-30:
            cand = _project_cone(theta - eta * grad, mask, factor)
            nrm = np.sqrt(cand @ cand)
            if nrm == 0.0:
                eta *= 0.5
                continue
            cand = cand / nrm
            fc = _quad(G, cand)
            diff = cand - theta
            if fc <= f - 1e-4 * (diff @ diff) / eta:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break
        diff = cand - theta
        step = np.sqrt(diff @ diff) / eta
        theta = cand
        f = fc
        if step < gtol:
            break
        eta *= 2.0
    return theta, f, it + 1


@numba.njit(cache=True)
def _descend_all(G, starts, masks, factor, gtol, max_iter):
    B, d = starts.shape
    thetas = np.empty((B, d))
    values = np.empty(B)
    for b in range(B):
        theta, f, _ = _descend(G, starts[b], masks[b], factor, gtol, max_iter)
        thetas[b] = theta
        values[b] = f
    return thetas, values


def sample_cone_vectors(d: int, k: int, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random nonzero members of random cones ``C(S)``, ``|S| = k``.

    Returns the vectors (one per row) and the boolean support masks. The
    off-support l1 mass is a uniform fraction of its allowed maximum.
    """
    if k < 1 or k > d:
        raise PreconditionError(f"cone size k must lie in 1..{d}, got {k}")
    masks = np.zeros((count, d), dtype=bool)
    vecs = np.empty((count, d))
    for i in range(count):
        support = rng.choice(d, size=k, replace=False)
        masks[i, support] = True
        on = rng.standard_normal(k)
        while not np.any(on):
            on = rng.standard_normal(k)
        off = rng.laplace(size=d - k)
        budget = CONE_FACTOR * np.abs(on).sum() * rng.uniform()
        l1 = np.abs(off).sum()
        off = off * (budget / l1) if l1 > 0 else off
        vecs[i, masks[i]] = on
        vecs[i, ~masks[i]] = off
    return vecs, masks


def sample_sparse_vectors(d: int, s: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random nonzero ``s``-sparse Gaussian vectors, one per row."""
    out = np.zeros((count, d))
    for i in range(count):
        support = rng.choice(d, size=s, replace=False)
        vals = rng.standard_normal(s)
        while not np.any(vals):
            vals = rng.standard_normal(s)
        out[i, support] = vals
    return out


@dataclass(frozen=True)
class REEstimate:
    gamma_hat: float
    witness: np.ndarray
    witness_support: tuple[int, ...]
    restarts: int
    seed: int
    lower_bound: float
    support_bound: float
    supports_examined: int
    exhaustive: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "gamma_hat": self.gamma_hat,
                "witness": [float(v) for v in self.witness],
                "witness_support": list(self.witness_support),
                "restarts": self.restarts,
                "seed": self.seed,
                "lower_bound": self.lower_bound,
                "support_bound": self.support_bound,
                "supports_examined": self.supports_examined,
                "exhaustive": self.exhaustive,
            }
        )


def _candidate_supports(d: int, k: int, rng: np.random.Generator, max_supports: int) -> tuple[np.ndarray, bool]:
    total = math.comb(d, k)
    if total <= max_supports:
        return np.array(list(itertools.combinations(range(d), k)), dtype=np.intp).reshape(total, k), True
    picks = {tuple(sorted(rng.choice(d, size=k, replace=False).tolist())) for _ in range(max_supports)}
    return np.array(sorted(picks), dtype=np.intp), False


def sandwich_tolerance(G: np.ndarray) -> float:
    scale = float(np.abs(G).sum(axis=1).max()) if G.size else 0.0
    return 1e-12 * max(1.0, scale)


def re_upper_bound(
    X,
    k: int,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_supports: int = MAX_EXHAUSTIVE_SUPPORTS,
    gtol: float = DESCENT_GTOL,
    max_iter: int = DESCENT_MAX_ITER,
    screen_iter: int = SCREEN_ITER,
    refine: int = REFINE_COUNT,
) -> REEstimate:
    """Smallest cone-restricted Rayleigh quotient found by local descent.

    Every candidate support (all of them when there are at most
    ``max_supports``, otherwise that many sampled uniformly) seeds one
    descent from the bottom eigenvector of its Gram block. ``restarts``
    further descents start from random cone points on randomly chosen
    candidate supports. All descents first run ``screen_iter`` iterations;
    the ``refine`` lowest are then continued to convergence.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("design must be a matrix")
    n, d = X.shape
    if not 1 <= k <= d:
        raise PreconditionError(f"k must lie in 1..{d}, got {k}")
    rng = derive_rng(seed, "re_upper_bound")
    G = X.T @ X / n
    supports, exhaustive = _candidate_supports(d, k, rng, max_supports)
    n_sup = supports.shape[0]

    blocks = G[supports[:, :, None], supports[:, None, :]]
    evals, evecs = np.linalg.eigh(blocks)
    support_bound = float(evals[:, 0].min())

    starts = np.zeros((n_sup + restarts, d))
    masks = np.zeros((n_sup + restarts, d), dtype=bool)
    rows = np.arange(n_sup)[:, None]
    starts[rows, supports] = evecs[:, :, 0]
    masks[rows, supports] = True
    if restarts:
        owners = rng.integers(0, n_sup, size=restarts)
        for i, owner in enumerate(owners):
            mask = np.zeros(d, dtype=bool)
            mask[supports[owner]] = True
            on = rng.standard_normal(k)
            off = rng.laplace(size=d - k)
            l1 = np.abs(off).sum()
            if l1 > 0:
                off *= CONE_FACTOR * np.abs(on).sum() * rng.uniform() / l1
            starts[n_sup + i, mask] = on
            starts[n_sup + i, ~mask] = off
            masks[n_sup + i] = mask

    thetas, values = _descend_all(G, starts, masks, CONE_FACTOR, gtol, screen_iter)
    if refine > 0 and max_iter > screen_iter:
        chosen = np.argsort(values, kind="stable")[:refine]
        more, more_values = _descend_all(G, thetas[chosen], masks[chosen], CONE_FACTOR, gtol, max_iter)
        improved = more_values <= values[chosen]
        thetas[chosen[improved]] = more[improved]
        values[chosen[improved]] = more_values[improved]
    best = int(np.argmin(values))
    witness = thetas[best]
    owner = supports[best] if best < n_sup else supports[owners[best - n_sup]]
    gamma_hat = rayleigh(X, witness)

    lower = float(np.linalg.eigvalsh(G)[0])
    tol = sandwich_tolerance(G)
    if exhaustive:
        assert gamma_hat <= support_bound + tol, (gamma_hat, support_bound)
    assert lower <= gamma_hat + tol, (lower, gamma_hat)
    return REEstimate(
        gamma_hat=gamma_hat,
        witness=witness,
        witness_support=tuple(int(j) for j in owner),
        restarts=int(restarts),
        seed=int(seed),
        lower_bound=lower,
        support_bound=support_bound,
        supports_examined=n_sup,
        exhaustive=exhaustive,
    )


def zero_re_certificate(X, k: int, rtol: float = 1e-10) -> Optional[np.ndarray]:
    """A nonzero ``(3k+1)``-sparse kernel vector of ``X``, if the search finds one.

    Zero columns give 1-sparse certificates directly. Otherwise windows of
    ``3k+1`` consecutive nonzero columns (the first ones, then sliding) are
    checked for a singular value below ``rtol`` times the largest.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    norms = np.linalg.norm(X, axis=0)
    scale = float(norms.max()) if d else 0.0
    zero_cols = np.flatnonzero(norms <= rtol * max(scale, 1e-300))
    if zero_cols.size:
        theta = np.zeros(d)
        theta[zero_cols[0]] = 1.0
        return theta
    width = 3 * k + 1
    cols = np.arange(d)
    starts = range(0, max(1, d - width + 1))
    for s in starts:
        window = cols[s : s + width]
        _, sv, vt = np.linalg.svd(X[:, window], full_matrices=True)
        if window.size > n:
            smallest = 0.0
        else:
            smallest = float(sv[-1])
        if smallest <= rtol * max(float(sv[0]), 1e-300):
            theta = np.zeros(d)
            theta[window] = vt[-1]
            if np.linalg.norm(X @ theta) <= rtol * max(float(sv[0]), 1.0) * np.linalg.norm(theta):
                return theta
    return None


class NormalizationCheck(NamedTuple):
    passed: bool
    worst_ratio: float


def check_normalization(
    X,
    k: int,
    mode: str = "exact",
    seed: int = 0,
    samples: int = NORMALIZATION_SAMPLES,
    budget: int = NORMALIZATION_BUDGET,
) -> NormalizationCheck:
    """Check ``||X theta||^2 / n <= ||theta||^2`` over all ``2k``-sparse ``theta``.

    ``exact`` takes the largest top eigenvalue of ``X_S^T X_S / n`` over every
    support of size ``min(2k, d)``; ``sampled`` probes random sparse vectors.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    s = min(2 * k, d)
    if s < 1:
        raise PreconditionError("k must be positive")
    if mode == "exact":
        total = math.comb(d, s)
        if total > budget:
            raise BudgetExceeded(f"C({d}, {s}) = {total} supports exceeds budget {budget}")
        G = X.T @ X / n
        worst = -np.inf
        combos = itertools.combinations(range(d), s)
        while True:
            chunk = list(itertools.islice(combos, 20000))
            if not chunk:
                break
            idx = np.array(chunk, dtype=np.intp)
            top = np.linalg.eigvalsh(G[idx[:, :, None], idx[:, None, :]])[:, -1]
            worst = max(worst, float(top.max()))
    elif mode == "sampled":
        rng = derive_rng(seed, "check_normalization")
        thetas = sample_sparse_vectors(d, s, samples, rng)
        ratios = np.sum((thetas @ X.T) ** 2, axis=1) / (n * np.sum(thetas**2, axis=1))
        worst = float(ratios.max())
    else:
        raise PreconditionError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    return NormalizationCheck(bool(worst <= 1.0 + NORMALIZATION_RTOL), worst)


def operator_norm(A, tol: float = 1e-9, seed: int = 0, max_iter: int = 100000) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    A = np.asarray(A, dtype=np.float64)
    if not np.any(A):
        return 0.0
    v = derive_rng(seed, "operator_norm").standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        new = math.sqrt(norm_w)
        if abs(new - sigma) <= tol * max(new, 1.0):
            return float(np.linalg.norm(A @ v))
        sigma = new
    return float(np.linalg.norm(A @ v))


@dataclass(frozen=True)
class GaussianBoundReport:
    n: int
    d: int
    k: int
    seed: int
    upper_pass_rate: np.ndarray
    lower_pass_rate: np.ndarray

    @property
    def trials(self) -> int:
        return int(self.upper_pass_rate.size)

    def trials_passing(self, rate: float = 0.99) -> int:
        ok = (self.upper_pass_rate >= rate) & (self.lower_pass_rate >= rate)
        return int(ok.sum())


def gaussian_bound_suite(
    n: int, d: int, k: int, trials: int, seed: int, probes: int = 1000
) -> GaussianBoundReport:
    """Monte-Carlo check of the sparse upper (3) and cone lower (1/8)
    singular-value bounds for i.i.d. standard Gaussian matrices."""
    if k < 1:
        raise PreconditionError("k must be positive")
    if 2 * k > d:
        raise PreconditionError("need 2k <= d")
    if n < 60 * k * math.log(d):
        warnings.warn(
            f"n = {n} is below 60 k log d = {60 * k * math.log(d):.1f}; the bounds are only "
            "guaranteed for n large relative to k log d",
            stacklevel=2,
        )
    upper = np.empty(trials)
    lower = np.empty(trials)
    for trial in range(trials):
        rng = derive_rng(seed, "gaussian_bound_suite", trial)
        A = rng.standard_normal((n, d))
        sparse = sample_sparse_vectors(d, 2 * k, probes, rng)
        cone, _ = sample_cone_vectors(d, k, probes, rng)
        up = np.linalg.norm(sparse @ A.T, axis=1) / math.sqrt(n) <= 3.0 * np.linalg.norm(sparse, axis=1)
        lo = np.linalg.norm(cone @ A.T, axis=1) / math.sqrt(n) >= np.linalg.norm(cone, axis=1) / 8.0
        upper[trial] = up.mean()
        lower[trial] = lo.mean()
    return GaussianBoundReport(n=n, d=d, k=k, seed=seed, upper_pass_rate=upper, lower_pass_rate=lower)


def support_lambda_min(X, k: int, supports: Optional[Sequence[Sequence[int]]] = None) -> float:
    """``min_S lambda_min(X_S^T X_S / n)`` over the given (default: all) size-k supports."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    G = X.T @ X / n
    idx = np.array(list(supports) if supports is not None else list(itertools.combinations(range(d), k)), dtype=np.intp)
    return float(np.linalg.eigvalsh(G[idx[:, :, None], idx[:, None, :]])[:, 0].min())
