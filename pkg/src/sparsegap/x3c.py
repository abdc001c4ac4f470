"""Exact 3-set cover instances and their reduction to sparse linear systems.

Triples are 1-based and sorted; the ``j``-th triple of ``{1..m}`` in
lexicographic order carries index ``j`` (also 1-based). The cover matrix has
``4p`` columns grouped as four blocks of ``p``: for triple ``j`` the entries
``u[j], u[p+j], u[2p+j], u[3p+j]`` (1-based) are the four switches that the
response vector constrains.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    DecodeInconsistency,
    InvalidGroundSet,
    NotACover,
    NotASolution,
    ShapeError,
    SparsityViolation,
)

Triple = tuple[int, int, int]

DEFAULT_COVER_BUDGET = 10**7


def _check_ground_set(m: int, need_divisible: bool = True) -> int:
    if isinstance(m, bool) or int(m) != m:
        raise InvalidGroundSet(f"ground-set size must be an integer, got {m!r}")
    m = int(m)
    if m < 3:
        raise InvalidGroundSet(f"ground-set size must be at least 3, got {m}")
    if need_divisible and m % 3:
        raise InvalidGroundSet(f"ground-set size must be divisible by 3, got {m}")
    return m


@dataclass(frozen=True)
class TripleIndex:
    """Bijection between 1-based indices and sorted triples of ``{1..m}``."""

    m: int
    triples: tuple[Triple, ...]
    _positions: dict = field(repr=False, compare=False)

    @property
    def p(self) -> int:
        return len(self.triples)

    def triple(self, j: int) -> Triple:
        if not 1 <= j <= self.p:
            raise IndexError(f"triple index {j} outside 1..{self.p}")
        return self.triples[j - 1]

    def index(self, triple: Sequence[int]) -> int:
        key = tuple(sorted(int(a) for a in triple))
        try:
            return self._positions[key]
        except KeyError:
            raise KeyError(f"{key} is not a triple of 1..{self.m}") from None

    def __len__(self) -> int:
        return self.p


@lru_cache(maxsize=None)
def enumerate_triples(m: int) -> TripleIndex:
    """All ``C(m, 3)`` triples of ``{1..m}`` in lexicographic order."""
    m = _check_ground_set(m, need_divisible=False)
    triples = tuple(itertools.combinations(range(1, m + 1), 3))
    positions = {t: j for j, t in enumerate(triples, start=1)}
    return TripleIndex(m=m, triples=triples, _positions=positions)


def _normalize_triple(raw: Sequence[int], m: int) -> Triple:
    members = tuple(int(a) for a in raw)
    if len(members) != 3 or len(set(members)) != 3:
        raise InvalidGroundSet(f"{list(raw)} is not a set of three distinct elements")
    if any(a < 1 or a > m for a in members):
        raise InvalidGroundSet(f"{list(raw)} has members outside 1..{m}")
    return tuple(sorted(members))  # type: ignore[return-value]


@dataclass(frozen=True)
class X3CInstance:
    """Ground set ``{1..m}`` together with a collection of 3-subsets."""

    m: int
    triples: tuple[Triple, ...]

    def __post_init__(self):
        m = _check_ground_set(self.m)
        triples = tuple(_normalize_triple(t, m) for t in self.triples)
        if len(set(triples)) != len(triples):
            raise InvalidGroundSet("collection contains duplicate triples")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "triples", triples)

    @property
    def p(self) -> int:
        return math.comb(self.m, 3)

    @property
    def index(self) -> TripleIndex:
        return enumerate_triples(self.m)

    def triple_indices(self) -> list[int]:
        """Global indices of the collection's triples, in collection order."""
        index = self.index
        return [index.index(t) for t in self.triples]

    def to_json(self) -> str:
        return json.dumps({"m": self.m, "triples": [list(t) for t in self.triples]})

    @classmethod
    def from_json(cls, text: str) -> "X3CInstance":
        data = json.loads(text)
        return cls(m=data["m"], triples=tuple(tuple(t) for t in data["triples"]))


@dataclass(frozen=True)
class ExactCover:
    """Selected triples, as global 1-based triple indices."""

    selected: frozenset[int]

    def __post_init__(self):
        object.__setattr__(self, "selected", frozenset(int(j) for j in self.selected))

    def triples(self, m: int) -> list[Triple]:
        index = enumerate_triples(m)
        return [index.triple(j) for j in sorted(self.selected)]

    def positions(self, inst: X3CInstance) -> list[int]:
        """1-based positions of the selected triples inside ``inst.triples``."""
        where = {j: pos for pos, j in enumerate(inst.triple_indices(), start=1)}
        return sorted(where[j] for j in self.selected if j in where)

    @classmethod
    def from_triples(cls, m: int, triples) -> "ExactCover":
        index = enumerate_triples(m)
        return cls(frozenset(index.index(t) for t in triples))


def cover_problems(inst: X3CInstance, cover: ExactCover) -> list[str]:
    """Reasons ``cover`` is not an exact cover of ``inst`` (empty when valid)."""
    problems = []
    index = inst.index
    members = set(inst.triple_indices())
    if len(cover.selected) != inst.m // 3:
        problems.append(f"expected {inst.m // 3} triples, got {len(cover.selected)}")
    covered: list[int] = []
    for j in sorted(cover.selected):
        if not 1 <= j <= index.p:
            problems.append(f"triple index {j} outside 1..{index.p}")
            continue
        if j not in members:
            problems.append(f"triple {index.triple(j)} is not in the collection")
        covered.extend(index.triple(j))
    if len(covered) != len(set(covered)):
        problems.append("selected triples overlap")
    if set(covered) != set(range(1, inst.m + 1)):
        problems.append("selected triples do not cover the ground set")
    return problems


def is_exact_cover(inst: X3CInstance, cover: ExactCover) -> bool:
    return not cover_problems(inst, cover)


@dataclass(frozen=True)
class CoverMatrix:
    """The ``(m + 3p) x 4p`` reduction matrix ``[[A, 0], [B, C]]``."""

    m: int
    p: int
    entries: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def A(self) -> np.ndarray:
        return self.entries[: self.m, : self.p]

    @property
    def B(self) -> np.ndarray:
        return self.entries[self.m :, : self.p]

    @property
    def C(self) -> np.ndarray:
        return self.entries[self.m :, self.p :]

    @property
    def index(self) -> TripleIndex:
        return enumerate_triples(self.m)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.entries:
            writer.writerow(repr(float(v)) for v in row)
        return buf.getvalue()


@lru_cache(maxsize=8)
def _cover_entries(m: int) -> np.ndarray:
    index = enumerate_triples(m)
    p = index.p
    M = np.zeros((m + 3 * p, 4 * p), dtype=np.float64)
    for j0, (a, b, c) in enumerate(index.triples):
        M[[a - 1, b - 1, c - 1], j0] = 1.0
    rows = np.arange(p)
    # B: rows j and p+j select u_j; rows 2p+j are empty
    M[m + rows, rows] = 1.0
    M[m + p + rows, rows] = 1.0
    # C acts on the last 3p columns: -f_j, f_{p+j}, f_{2p+j}
    M[m + rows, p + rows] = -1.0
    M[m + p + rows, 2 * p + rows] = 1.0
    M[m + 2 * p + rows, 3 * p + rows] = 1.0
    M.setflags(write=False)
    return M


def build_cover_matrix(m: int) -> CoverMatrix:
    m = _check_ground_set(m)
    entries = _cover_entries(m)
    return CoverMatrix(m=m, p=math.comb(m, 3), entries=entries)


def build_response(inst: X3CInstance) -> np.ndarray:
    m, p = inst.m, inst.p
    y = np.zeros(m + 3 * p)
    y[:m] = 1.0
    in_collection = np.zeros(p, dtype=bool)
    in_collection[np.asarray(inst.triple_indices(), dtype=int) - 1] = True
    y[m + p : m + 2 * p] = in_collection
    y[m + 2 * p :] = ~in_collection
    return y


@dataclass(frozen=True)
class BinarySolution:
    u: np.ndarray

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.u))


def encode_cover(inst: X3CInstance, cover: ExactCover) -> BinarySolution:
    """Binary ``u`` with ``M u = y`` exactly for a valid exact cover.

    Per triple the switch block ``(u_j, u_{p+j}, u_{2p+j}, u_{3p+j})`` is
    ``(1,1,0,0)`` when selected, ``(0,0,1,0)`` when in the collection but
    unselected, and ``(0,0,0,1)`` otherwise.
    """
    problems = cover_problems(inst, cover)
    if problems:
        raise NotACover("; ".join(problems))
    p = inst.p
    u = np.zeros(4 * p)
    members = set(inst.triple_indices())
    for j in range(1, p + 1):
        if j in cover.selected:
            u[j - 1] = u[p + j - 1] = 1.0
        elif j in members:
            u[2 * p + j - 1] = 1.0
        else:
            u[3 * p + j - 1] = 1.0
    return BinarySolution(u)


def decode_cover(inst: X3CInstance, u) -> ExactCover:
    """Recover the exact cover from a sparse near-solution of ``M u = y``."""
    u = np.asarray(u, dtype=np.float64)
    p = inst.p
    if u.shape != (4 * p,):
        raise ShapeError(f"expected a vector of length {4 * p}, got shape {u.shape}")
    budget = inst.m // 3 + p
    nnz = int(np.count_nonzero(u))
    if nnz > budget:
        raise SparsityViolation(f"{nnz} nonzeros exceeds m/3 + p = {budget}")
    M = build_cover_matrix(inst.m).entries
    residual = float(np.linalg.norm(M @ u - build_response(inst)))
    if not residual < 0.5:
        raise NotASolution(f"residual {residual!r} is not below 1/2")
    cover = ExactCover(frozenset(int(j) + 1 for j in np.flatnonzero(u[:p] > 0.5)))
    problems = cover_problems(inst, cover)
    if problems:
        raise DecodeInconsistency("; ".join(problems))
    return cover


def _masks(inst: X3CInstance) -> list[int]:
    return [sum(1 << (a - 1) for a in t) for t in inst.triples]


def iter_exact_covers(inst: X3CInstance, budget: int = DEFAULT_COVER_BUDGET) -> Iterator[ExactCover]:
    """Exact covers in lexicographic order of collection positions."""
    size = inst.m // 3
    candidates = math.comb(len(inst.triples), size)
    if candidates > budget:
        raise BudgetExceeded(f"C({len(inst.triples)}, {size}) = {candidates} subsets exceeds budget {budget}")
    masks = _masks(inst)
    full = (1 << inst.m) - 1
    global_ids = inst.triple_indices()
    for combo in itertools.combinations(range(len(masks)), size):
        union = 0
        for i in combo:
            if union & masks[i]:
                break
            union |= masks[i]
        else:
            if union == full:
                yield ExactCover(frozenset(global_ids[i] for i in combo))


def solve_x3c_bruteforce(inst: X3CInstance, budget: int = DEFAULT_COVER_BUDGET) -> Optional[ExactCover]:
    return next(iter_exact_covers(inst, budget), None)


def solve_x3c_via_regression(inst: X3CInstance, estimator: Callable) -> Optional[ExactCover]:
    """Run ``estimator`` on the noiseless system ``(M, y)`` and decode.

    ``estimator`` takes a :class:`~sparsegap.estimators.RegressionProblem`
    and returns an object with a ``theta`` attribute.
    """
    from .estimators import RegressionProblem

    M = build_cover_matrix(inst.m).entries
    y = build_response(inst)
    problem = RegressionProblem(X=M, y=y, sigma=0.0, k=inst.m // 3 + inst.p)
    estimate = estimator(problem)
    try:
        return decode_cover(inst, estimate.theta)
    except (SparsityViolation, NotASolution, DecodeInconsistency):
        return None


def random_partition(m: int, rng: np.random.Generator) -> list[Triple]:
    perm = rng.permutation(np.arange(1, m + 1))
    return [tuple(sorted(int(a) for a in perm[i : i + 3])) for i in range(0, m, 3)]


def random_instance(
    m: int,
    rng: np.random.Generator,
    plant_cover: bool = False,
    extra: Optional[int] = None,
) -> tuple[X3CInstance, Optional[ExactCover]]:
    """Random collection of triples, optionally containing a planted cover.

    ``extra`` triples (default ``m``, capped by what is left) are drawn
    uniformly without replacement from the triples not already present.
    The collection is returned in lexicographic order.
    """
    m = _check_ground_set(m)
    index = enumerate_triples(m)
    planted = random_partition(m, rng) if plant_cover else []
    chosen = {index.index(t) for t in planted}
    rest = [j for j in range(1, index.p + 1) if j not in chosen]
    n_extra = m if extra is None else int(extra)
    n_extra = max(0, min(n_extra, len(rest)))
    if n_extra:
        chosen.update(int(j) for j in rng.choice(rest, size=n_extra, replace=False))
    inst = X3CInstance(m=m, triples=tuple(index.triple(j) for j in sorted(chosen)))
    cover = ExactCover.from_triples(m, planted) if plant_cover else None
    return inst, cover
