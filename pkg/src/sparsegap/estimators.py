"""Sparse regression estimators: best subset, Lasso and thresholded Lasso."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .errors import BudgetExceeded, NonConverged, PreconditionError, ShapeError

DEFAULT_SUPPORT_BUDGET = 10**7
LASSO_TOL = 1e-10
LASSO_CERT_TOL = 1e-8
LASSO_MAX_ITER = 10**5

# supports whose screened residual is this close (relative to ||y||^2) to the
# best one are refit exactly before choosing
_SCREEN_SLACK = 1e-8
# exact residuals closer than this (relative) count as ties
_TIE_RTOL = 1e-12
_CHUNK = 20000


@dataclass(frozen=True)
class RegressionProblem:
    """Observations ``y = X theta* + w`` with noise level ``sigma``."""

    X: np.ndarray
    y: np.ndarray
    sigma: float
    k: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ShapeError(f"design must be a nonempty matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ShapeError(f"response of shape {y.shape} does not match design {X.shape}")
        if not self.sigma >= 0:
            raise PreconditionError(f"sigma must be nonnegative, got {self.sigma}")
        if int(self.k) != self.k or not 1 <= self.k <= X.shape[1]:
            raise PreconditionError(f"sparsity k must lie in 1..{X.shape[1]}, got {self.k}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "k", int(self.k))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class Estimate:
    theta: np.ndarray
    objective: float
    converged: bool = True
    iterations: int = 0
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.theta))

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta": [float(v) for v in self.theta],
                "support": list(self.support),
                "objective": float(self.objective),
            }
        )


def least_squares(X_S, y) -> np.ndarray:
    """Minimum-norm minimizer of ``||y - X_S beta||``."""
    X_S = np.asarray(X_S, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X_S.ndim != 2 or y.shape != (X_S.shape[0],):
        raise ShapeError(f"cannot regress y of shape {y.shape} on X_S of shape {X_S.shape}")
    beta, *_ = np.linalg.lstsq(X_S, y, rcond=None)
    return beta


def _rss(X, y, theta) -> float:
    r = y - X @ theta
    return float(r @ r)


def _screen_rss(G, b, yy, supports: np.ndarray) -> np.ndarray:
    """Residual sums of squares for a batch of supports via Gram eigen-solves."""
    Gs = G[supports[:, :, None], supports[:, None, :]]
    bs = b[supports]
    w, V = np.linalg.eigh(Gs)
    proj = np.einsum("bij,bi->bj", V, bs)
    cutoff = np.maximum(w[:, -1:], 0.0) * 1e-12
    keep = w > cutoff
    explained = np.where(keep, proj**2 / np.where(keep, w, 1.0), 0.0).sum(axis=1)
    return yy - explained


def l0_estimate(prob: RegressionProblem, budget: int = DEFAULT_SUPPORT_BUDGET) -> Estimate:
    """Best k-sparse least-squares fit by enumerating all size-k supports.

    Supports are screened in batches with a Gram-matrix solve; the near-best
    ones are then refit with ``lstsq`` on the design itself, and the lowest
    residual wins with ties going to the lexicographically first support.
    """
    X, y, k, d = prob.X, prob.y, prob.k, prob.d
    count = math.comb(d, k)
    if count > budget:
        raise BudgetExceeded(f"C({d}, {k}) = {count} supports exceeds budget {budget}")
    G = X.T @ X
    b = X.T @ y
    yy = float(y @ y)

    screened = np.empty(count)
    combos = itertools.combinations(range(d), k)
    start = 0
    while start < count:
        size = min(_CHUNK, count - start)
        chunk = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, size)),
                            dtype=np.intp, count=size * k).reshape(size, k)
        screened[start : start + size] = _screen_rss(G, b, yy, chunk)
        start += size

    slack = _SCREEN_SLACK * max(yy, 1e-300)
    candidates = np.flatnonzero(screened <= screened.min() + slack)
    best = None
    for pos in candidates:
        support = _nth_combination(d, k, int(pos))
        theta = np.zeros(d)
        theta[list(support)] = least_squares(X[:, support], y)
        rss = _rss(X, y, theta)
        if best is None or rss < best[0] - _TIE_RTOL * max(yy, 1e-300):
            best = (rss, theta)
    rss, theta = best
    return Estimate(theta=theta, objective=rss, meta={"supports": count})


def _nth_combination(d: int, k: int, index: int) -> tuple[int, ...]:
    """The ``index``-th k-subset of ``range(d)`` in lexicographic order."""
    out = []
    c = 0
    for slots in range(k, 0, -1):
        while True:
            block = math.comb(d - c - 1, slots - 1)
            if index < block:
                break
            index -= block
            c += 1
        out.append(c)
        c += 1
    return tuple(out)


@numba.njit(cache=True)
def _coordinate_descent(G, q, lam, theta, tol, cert_tol, max_iter):
    d = q.shape[0]
    Gtheta = G @ theta
    for sweep in range(max_iter):
        max_change = 0.0
        for j in range(d):
            c = G[j, j]
            if c <= 0.0:
                continue
            z = q[j] - Gtheta[j] + c * theta[j]
            if z > lam:
                new = (z - lam) / c
            elif z < -lam:
                new = (z + lam) / c
            else:
                new = 0.0
            delta = new - theta[j]
            if delta != 0.0:
                for i in range(d):
                    Gtheta[i] += delta * G[i, j]
                theta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if max_change < tol:
            Gtheta = G @ theta
            worst = 0.0
            for j in range(d):
                if G[j, j] <= 0.0:
                    continue
                g = q[j] - Gtheta[j]
                if theta[j] > 0.0:
                    v = abs(g - lam)
                elif theta[j] < 0.0:
                    v = abs(g + lam)
                else:
                    v = abs(g) - lam
                if v > worst:
                    worst = v
            if worst <= cert_tol:
                return sweep + 1, True
    return max_iter, False


def lasso_objective(X, y, theta, lam) -> float:
    n = X.shape[0]
    return _rss(X, y, theta) / (2 * n) + lam * float(np.abs(theta).sum())


def lasso_certificate_gap(X, y, theta, lam) -> float:
    """Largest violation of the Lasso subgradient optimality conditions.

    Zero or negative means ``theta`` is certified optimal; columns that are
    identically zero are skipped.
    """
    n = X.shape[0]
    g = X.T @ (y - X @ theta) / n
    active = np.any(X != 0, axis=0)
    gaps = np.where(theta > 0, np.abs(g - lam), np.where(theta < 0, np.abs(g + lam), np.abs(g) - lam))
    gaps = gaps[active]
    return float(gaps.max()) if gaps.size else 0.0


def lasso(
    prob: RegressionProblem,
    lam: float,
    tol: float = LASSO_TOL,
    max_iter: int = LASSO_MAX_ITER,
    cert_tol: float = LASSO_CERT_TOL,
) -> Estimate:
    """Minimize ``(1/2n)||y - X theta||^2 + lam ||theta||_1`` by cyclic coordinate descent.

    Stops once a full sweep moves no coordinate by ``tol`` or more and the
    subgradient conditions hold to ``cert_tol``. Raises
    :class:`NonConverged`, carrying the last iterate, when ``max_iter``
    sweeps pass first.
    """
    if not lam >= 0:
        raise PreconditionError(f"lambda must be nonnegative, got {lam}")
    X, y, n = prob.X, prob.y, prob.n
    G = X.T @ X / n
    q = X.T @ y / n
    theta = np.zeros(prob.d)
    sweeps, ok = _coordinate_descent(G, q, float(lam), theta, float(tol), float(cert_tol), int(max_iter))
    theta[np.diag(G) <= 0.0] = 0.0
    est = Estimate(
        theta=theta,
        objective=lasso_objective(X, y, theta, lam),
        converged=bool(ok),
        iterations=int(sweeps),
        meta={"lambda": float(lam)},
    )
    if not ok:
        raise NonConverged(f"lasso did not certify within {max_iter} sweeps", estimate=est)
    return est


def threshold_topk(theta, k: int) -> np.ndarray:
    """Keep the ``k`` largest-magnitude entries; ties favour the smaller index."""
    theta = np.asarray(theta, dtype=np.float64)
    if not 1 <= k <= theta.size:
        raise PreconditionError(f"k must lie in 1..{theta.size}, got {k}")
    order = np.argsort(-np.abs(theta), kind="stable")
    out = np.zeros_like(theta)
    keep = order[:k]
    out[keep] = theta[keep]
    return out


def standard_lambda(sigma: float, n: int, d: int) -> float:
    """``4 sigma sqrt(log d / n)`` with the natural logarithm."""
    return 4.0 * sigma * math.sqrt(math.log(d) / n)


def thresholded_lasso(prob: RegressionProblem, tol: float = LASSO_TOL, max_iter: int = LASSO_MAX_ITER) -> Estimate:
    """Lasso at the standard regularization level, truncated to its top k entries."""
    if not prob.sigma > 0:
        raise PreconditionError("thresholded Lasso needs sigma > 0 to set lambda")
    if prob.d < 2:
        raise PreconditionError("thresholded Lasso needs d >= 2")
    lam = standard_lambda(prob.sigma, prob.n, prob.d)
    try:
        full = lasso(prob, lam, tol=tol, max_iter=max_iter)
    except NonConverged as exc:
        full = exc.estimate
        raise NonConverged(str(exc), estimate=_truncate(prob, full, lam)) from exc
    return _truncate(prob, full, lam)


def _truncate(prob: RegressionProblem, full: Estimate, lam: float) -> Estimate:
    theta = threshold_topk(full.theta, prob.k)
    return Estimate(
        theta=theta,
        objective=_rss(prob.X, prob.y, theta),
        converged=full.converged,
        iterations=full.iterations,
        meta={"lambda": lam, "lasso": full},
    )


def _standard_lasso(prob: RegressionProblem) -> Estimate:
    return lasso(prob, standard_lambda(prob.sigma, prob.n, prob.d))


ESTIMATORS: dict[str, Callable[[RegressionProblem], Estimate]] = {
    "l0": l0_estimate,
    "lasso": _standard_lasso,
    "thresh-lasso": thresholded_lasso,
}


def get_estimator(name: str) -> Callable[[RegressionProblem], Estimate]:
    try:
        return ESTIMATORS[name]
    except KeyError:
        raise PreconditionError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}") from None
