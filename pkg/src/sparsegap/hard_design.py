"""Ill-conditioned designs built from the cover matrix.

A design stacks ``n / (6k)`` copies of ``B_k = [A_k 0] / 2`` (where ``A_k``
is block-diagonal with ``t`` copies of ``sqrt(t) M``) on top of ``x R`` for a
standard Gaussian ``R``. The scale ``x`` is tuned by bisection so that the
estimated RE constant hits a target, then every entry is quantized to the
grid ``2^-l Z``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from ._seeding import check_seed, derive_rng, derive_seed
from .errors import (
    CalibrationFailed,
    ConstructionFailed,
    PrecisionTooCoarse,
    PreconditionError,
    ShapeError,
)
from .re_cond import (
    DEFAULT_RESTARTS,
    DESCENT_GTOL,
    NORMALIZATION_BUDGET,
    check_normalization,
    re_upper_bound,
)
from .x3c import CoverMatrix, build_cover_matrix

THEOREM_GAMMA_MAX = 1.0 / (24.0 * math.sqrt(2.0))
CALIBRATION_RTOL = 0.05
CALIBRATION_MAX_ITER = 60
DEFAULT_ATTEMPTS = 50
# x resolution of the search for the largest scale that keeps normalization
_NORM_CAP_XTOL = 1e-4


def quantize(x, l: int):
    """Round down to the nearest multiple of ``2^-l`` (scalar or array)."""
    scaled = np.floor(np.ldexp(np.asarray(x, dtype=np.float64), l))
    out = np.ldexp(scaled, -l)
    return float(out) if np.ndim(out) == 0 else out


def min_precision(n: int, d: int, epsilon_bar: float) -> int:
    """Smallest admissible quantization level (base-2 logarithms)."""
    return math.ceil(max(math.log2(12 * math.sqrt(d)), math.log2(math.sqrt(n * d) / epsilon_bar)))


@dataclass(frozen=True)
class HardDesignParams:
    m: int
    t: int
    d: int
    n: int
    gamma_target: float
    l: int
    epsilon_bar: float = 1e-6
    seed: int = 0
    strict_range: bool = True

    def __post_init__(self):
        if self.m < 3 or self.m % 3:
            raise PreconditionError(f"m must be a positive multiple of 3, got {self.m}")
        if self.t < 1:
            raise PreconditionError(f"t must be at least 1, got {self.t}")
        if not 4 * self.p * self.t <= 4 * self.k <= self.d:
            raise ShapeError(f"need 4pt <= 4k <= d, got p={self.p}, t={self.t}, k={self.k}, d={self.d}")
        if self.n <= 0 or self.n % (6 * self.k):
            raise ShapeError(f"n = {self.n} must be a positive multiple of 6k = {6 * self.k}")
        if not 0 < self.epsilon_bar:
            raise PreconditionError("epsilon_bar must be positive")
        if not self.epsilon_bar < self.gamma_target < 1.0:
            raise PreconditionError(f"gamma_target must lie in (epsilon_bar, 1), got {self.gamma_target}")
        if self.gamma_target >= THEOREM_GAMMA_MAX:
            if self.strict_range:
                raise PreconditionError(
                    f"gamma_target must be below 1/(24 sqrt 2) = {THEOREM_GAMMA_MAX:.6f}, got {self.gamma_target}"
                )
            warnings.warn(
                f"gamma_target {self.gamma_target} is outside (0, {THEOREM_GAMMA_MAX:.6f}); "
                "normalization is not guaranteed to be reachable",
                stacklevel=3,
            )
        if self.l < 1:
            raise PreconditionError("quantization level must be positive")
        check_seed(self.seed)

    @property
    def p(self) -> int:
        return math.comb(self.m, 3)

    @property
    def k(self) -> int:
        return self.t * (self.m // 3 + self.p)

    @property
    def bracket_top(self) -> float:
        return 8.0 * math.sqrt(2.0 * self.gamma_target)

    def to_dict(self) -> dict:
        return asdict(self)


def build_Ak(M: CoverMatrix, t: int) -> np.ndarray:
    if t < 1:
        raise PreconditionError(f"t must be at least 1, got {t}")
    block = math.sqrt(t) * M.entries
    return block_diag(*([block] * t))


def build_Bk(Ak: np.ndarray, d: int) -> np.ndarray:
    rows, cols = Ak.shape
    if d < cols:
        raise ShapeError(f"d = {d} is smaller than the {cols} columns of A_k")
    return 0.5 * np.hstack([Ak, np.zeros((rows, d - cols))])


def gaussian_block(params: HardDesignParams, r_seed: int) -> np.ndarray:
    return derive_rng(r_seed, "gaussian_block").standard_normal((params.n // 2, params.d))


def top_block(params: HardDesignParams) -> np.ndarray:
    Bk = build_Bk(build_Ak(build_cover_matrix(params.m), params.t), params.d)
    return _stack_top(Bk, params)


def _stack_top(Bk: np.ndarray, params: HardDesignParams) -> np.ndarray:
    if params.n % (6 * params.k):
        raise ShapeError(f"n = {params.n} must be a multiple of 6k = {6 * params.k}")
    if Bk.shape != (3 * params.k, params.d):
        raise ShapeError(f"B_k has shape {Bk.shape}, expected {(3 * params.k, params.d)}")
    return np.vstack([Bk] * (params.n // (6 * params.k)))


def build_Cx(Bk: np.ndarray, params: HardDesignParams, x: float, R: Optional[np.ndarray] = None) -> np.ndarray:
    """Top half: stacked copies of ``B_k``; bottom half: ``x R``.

    ``R`` defaults to the Gaussian block drawn from ``params.seed``; pass the
    same ``R`` for every ``x`` in a calibration.
    """
    if x < 0:
        raise PreconditionError("x must be nonnegative")
    top = _stack_top(Bk, params)
    if R is None:
        R = gaussian_block(params, params.seed)
    if R.shape != (params.n // 2, params.d):
        raise ShapeError(f"R has shape {R.shape}, expected {(params.n // 2, params.d)}")
    return np.vstack([top, x * R])


@dataclass
class Calibration:
    x: float
    gamma_hat: float
    trace: list = field(default_factory=list)
    converged: bool = True

    def __iter__(self):
        return iter((self.x, self.gamma_hat))


def _normalization_mode(params: HardDesignParams) -> str:
    s = min(2 * params.k, params.d)
    return "exact" if math.comb(params.d, s) <= NORMALIZATION_BUDGET else "sampled"


def normalization_cap(params: HardDesignParams, top: np.ndarray, R: np.ndarray, x_hi: float) -> float:
    """Largest ``x`` in ``[0, x_hi]`` (to ``1e-4``) at which ``C_x`` is normalized.

    The worst 2k-sparse ratio is nondecreasing in ``x``, so bisection applies.
    """
    mode = _normalization_mode(params)

    def ok(x):
        return check_normalization(np.vstack([top, x * R]), params.k, mode=mode, seed=params.seed).passed

    if ok(x_hi):
        return x_hi
    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, x_hi
    while hi - lo > _NORM_CAP_XTOL:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def calibrate_x(
    params: HardDesignParams,
    R: Optional[np.ndarray] = None,
    x_max: Optional[float] = None,
    restarts: int = DEFAULT_RESTARTS,
    rtol: float = CALIBRATION_RTOL,
    max_iter: int = CALIBRATION_MAX_ITER,
) -> Calibration:
    """Bisect on the Gaussian scale until the RE estimate is within ``rtol`` of the target.

    The bracket is ``[0, 8 sqrt(2 gamma)]``, optionally capped at ``x_max``.
    An evaluation that falls outside the current bracket values is
    re-estimated with four times the restarts under a fresh seed and the
    smaller value kept; the trace records every evaluation as ``(x, gamma_hat)``.
    """
    gamma = params.gamma_target
    top = top_block(params)
    if R is None:
        R = gaussian_block(params, params.seed)
    x_top = params.bracket_top if x_max is None else min(params.bracket_top, x_max)
    trace: list[tuple[float, float]] = []

    def estimate(x, attempt=0):
        C = np.vstack([top, x * R])
        seed = derive_seed(params.seed, "calibrate", attempt)
        return re_upper_bound(C, params.k, restarts=restarts * (4 if attempt else 1), seed=seed).gamma_hat

    g_hi = estimate(x_top)
    trace.append((x_top, g_hi))
    if g_hi < gamma * (1 - rtol):
        raise CalibrationFailed(
            f"RE estimate {g_hi:.6g} at the bracket top x = {x_top:.6g} is below the target {gamma}"
        )
    lo, hi, g_lo = 0.0, x_top, 0.0
    best = (abs(g_hi - gamma), x_top, g_hi)
    if best[0] <= rtol * gamma:
        return Calibration(x=x_top, gamma_hat=g_hi, trace=trace)
    slack = 2 * DESCENT_GTOL
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        g = estimate(mid)
        if not g_lo - slack <= g <= g_hi + slack:
            g = min(g, estimate(mid, attempt=1))
        trace.append((mid, g))
        if abs(g - gamma) < best[0]:
            best = (abs(g - gamma), mid, g)
        if abs(g - gamma) <= rtol * gamma:
            return Calibration(x=mid, gamma_hat=g, trace=trace)
        if g < gamma:
            lo, g_lo = mid, g
        else:
            hi, g_hi = mid, g
    return Calibration(x=best[1], gamma_hat=best[2], trace=trace, converged=False)


@dataclass
class HardDesign:
    X: np.ndarray
    params: HardDesignParams
    x_calibrated: float
    gamma_hat: float
    R_seed: int
    gamma_hat_unquantized: float = float("nan")
    normalization_ratio: float = float("nan")
    trace: list = field(default_factory=list)
    attempts: list = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def top(self) -> np.ndarray:
        return self.X[: self.params.n // 2]

    @property
    def bottom(self) -> np.ndarray:
        return self.X[self.params.n // 2 :]

    def save(self, directory, force: bool = False) -> Path:
        directory = Path(directory)
        if directory.exists() and any(directory.iterdir()) and not force:
            raise FileExistsError(f"{directory} exists and is not empty; pass force to overwrite")
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "params.json").write_text(json.dumps(self.params.to_dict(), indent=2) + "\n")
        self.X.astype("<f8").tofile(directory / "X.bin")
        meta = {"shape": list(self.X.shape), "dtype": "<f8", "order": "C", "l": self.params.l}
        (directory / "X.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
        provenance = {
            "x_calibrated": self.x_calibrated,
            "gamma_hat": self.gamma_hat,
            "gamma_hat_unquantized": self.gamma_hat_unquantized,
            "normalization_ratio": self.normalization_ratio,
            "R_seed": self.R_seed,
            "bisection": [{"x": x, "gamma_hat": g} for x, g in self.trace],
            "attempts": self.attempts,
        }
        (directory / "provenance.json").write_text(json.dumps(provenance, indent=2) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "HardDesign":
        directory = Path(directory)
        params = HardDesignParams(**json.loads((directory / "params.json").read_text()))
        meta = json.loads((directory / "X.meta.json").read_text())
        X = np.fromfile(directory / "X.bin", dtype=meta["dtype"]).reshape(meta["shape"])
        prov = json.loads((directory / "provenance.json").read_text())
        return cls(
            X=X.astype(np.float64),
            params=params,
            x_calibrated=prov["x_calibrated"],
            gamma_hat=prov["gamma_hat"],
            R_seed=prov["R_seed"],
            gamma_hat_unquantized=prov["gamma_hat_unquantized"],
            normalization_ratio=prov["normalization_ratio"],
            trace=[(e["x"], e["gamma_hat"]) for e in prov["bisection"]],
            attempts=prov["attempts"],
        )


def build_hard_design(
    params: HardDesignParams,
    attempts: int = DEFAULT_ATTEMPTS,
    restarts: int = DEFAULT_RESTARTS,
) -> HardDesign:
    """Calibrate, quantize and certify a design; retry with fresh Gaussian blocks.

    Each attempt first finds the largest scale that keeps the normalization
    condition, so a Gaussian block that cannot reach the target RE without
    breaking normalization is discarded after one RE estimate.
    """
    needed = min_precision(params.n, params.d, params.epsilon_bar)
    if params.l < needed:
        raise PrecisionTooCoarse(f"l = {params.l} is below the required {needed}")
    top = top_block(params)
    mode = _normalization_mode(params)
    log = []
    for attempt in range(attempts):
        r_seed = derive_seed(params.seed, "R", attempt)
        R = gaussian_block(params, r_seed)
        cap = normalization_cap(params, top, R, params.bracket_top)
        try:
            cal = calibrate_x(params, R=R, x_max=cap, restarts=restarts)
        except CalibrationFailed as exc:
            log.append({"attempt": attempt, "R_seed": r_seed, "x_cap": cap, "failure": str(exc)})
            continue
        if not cal.converged:
            log.append({"attempt": attempt, "R_seed": r_seed, "x_cap": cap,
                        "failure": f"bisection stalled at gamma_hat {cal.gamma_hat:.6g}"})
            continue
        Xq = quantize(np.vstack([top, cal.x * R]), params.l)
        norm = check_normalization(Xq, params.k, mode=mode, seed=params.seed)
        if not norm.passed:
            log.append({"attempt": attempt, "R_seed": r_seed, "x_cap": cap,
                        "failure": f"quantized design fails normalization (ratio {norm.worst_ratio!r})"})
            continue
        est = re_upper_bound(Xq, params.k, restarts=restarts, seed=derive_seed(params.seed, "calibrate", 0))
        drift = abs(est.gamma_hat - cal.gamma_hat)
        allowed = 2.0 ** -params.l * math.sqrt(params.n * params.d) / math.sqrt(params.n) + 2 * DESCENT_GTOL
        if drift > allowed:
            log.append({"attempt": attempt, "R_seed": r_seed, "x_cap": cap,
                        "failure": f"quantization moved the RE estimate by {drift!r} > {allowed!r}"})
            continue
        log.append({"attempt": attempt, "R_seed": r_seed, "x_cap": cap, "failure": None})
        return HardDesign(
            X=Xq,
            params=params,
            x_calibrated=cal.x,
            gamma_hat=est.gamma_hat,
            R_seed=r_seed,
            gamma_hat_unquantized=cal.gamma_hat,
            normalization_ratio=norm.worst_ratio,
            trace=cal.trace,
            attempts=log,
        )
    raise ConstructionFailed(
        f"no design for gamma_target={params.gamma_target} within {attempts} attempts; "
        f"last failure: {log[-1]['failure'] if log else 'none'}"
    )
