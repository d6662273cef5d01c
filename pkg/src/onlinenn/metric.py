"""Point universes, distances, balls and brute-force metric entropy.

Points are 1-D float arrays of length ``space.dim``; finite point sets are
``(n, dim)`` arrays.  Scalars are accepted for one-dimensional spaces.

Single-pair distances are computed in plain Python and vectorised ones in
numpy, with the same operation order, so both give bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KINDS = ("sup", "euclidean", "interval")

# exact packing / covering search is limited to this many candidate points
EXACT_CAP = 24


class InputError(ValueError):
    """Raised for malformed points or point sets."""


@dataclass(frozen=True)
class MetricSpace:
    """A box-shaped point universe with a metric and doubling parameters.

    ``d`` and ``c`` certify ``nu(B(x, r)) <= c * r**d`` for the normalised
    Lebesgue measure on the box; by default ``d = dim`` and
    ``c = 2**dim / volume``.
    """

    kind: str
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    d: int = 0
    c: float = 0.0
    diameter: float = field(init=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown metric kind {self.kind!r}")
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise InputError("domain bounds must have equal, positive length")
        if self.kind == "interval" and len(lo) != 1:
            raise InputError("interval spaces are one-dimensional")
        if any(not (math.isfinite(a) and math.isfinite(b) and a < b) for a, b in zip(lo, hi)):
            raise InputError("domain box must be finite with lo < hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        dim = len(lo)
        volume = math.prod(b - a for a, b in zip(lo, hi))
        if not self.d:
            object.__setattr__(self, "d", dim)
        if not self.c:
            object.__setattr__(self, "c", 2.0**dim / volume)
        if self.d <= 0 or self.c <= 0:
            raise InputError("doubling parameters must be positive")
        object.__setattr__(self, "diameter", _pair(self.kind, lo, hi))

    @classmethod
    def interval(cls, lo: float = 0.0, hi: float = 1.0, **kw) -> "MetricSpace":
        return cls("interval", (lo,), (hi,), **kw)

    @classmethod
    def cube(cls, dim: int, kind: str = "sup", lo: float = 0.0, hi: float = 1.0, **kw) -> "MetricSpace":
        return cls(kind, (lo,) * dim, (hi,) * dim, **kw)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return math.prod(b - a for a, b in zip(self.lo, self.hi))

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi)

    def contains(self, x) -> bool:
        p = as_point(self, x)
        return bool(np.all(p >= self.lo_array) and np.all(p <= self.hi_array))


@dataclass(frozen=True)
class Ball:
    """Open ball ``B(center, radius)``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError("ball radius must be positive")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    def contains(self, space: MetricSpace, x) -> bool:
        return distance(space, self.center, x) < self.radius


@dataclass(frozen=True)
class EntropyCount:
    """Packing or covering number; ``exact`` is False for greedy bounds."""

    value: int
    exact: bool


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, a sequence of ints or a ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed if isinstance(seed, int) else list(seed))


def as_point(space: MetricSpace, x) -> np.ndarray:
    if type(x) is np.ndarray and x.shape == (space.dim,) and x.dtype == np.float64:
        if all(map(math.isfinite, x.tolist())):
            return x
        raise InputError("point coordinates must be finite")
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1 or p.shape[0] != space.dim:
        raise InputError(f"point of shape {p.shape} does not match dimension {space.dim}")
    if not np.all(np.isfinite(p)):
        raise InputError("point coordinates must be finite")
    return p


def as_points(space: MetricSpace, Z) -> np.ndarray:
    """Coerce a finite point set to an ``(n, dim)`` float array."""
    a = np.asarray(Z, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1) if space.dim == 1 else a.reshape(1, -1)
    if a.ndim != 2 or (a.shape[0] and a.shape[1] != space.dim):
        raise InputError(f"point set of shape {a.shape} does not match dimension {space.dim}")
    if a.shape[0] == 0:
        return a.reshape(0, space.dim)
    return a


# Euclidean norms are computed as m * sqrt(sum((d_i / m)^2)) with m = max |d_i|,
# so tiny distances never underflow to zero.  Scalar and vectorised versions
# perform the same operations in the same order and agree bit for bit.


def _euclid(diffs: Sequence[float]) -> float:
    a = [abs(v) for v in diffs]
    m = max(a)
    if m == 0.0:
        return 0.0
    acc = 0.0
    for v in a:
        t = v / m
        acc += t * t
    return m * math.sqrt(acc)


def _euclid_rows(diff: np.ndarray) -> np.ndarray:
    A = np.abs(diff)
    if A.shape[-1] == 0 or A.size == 0:
        return np.zeros(A.shape[:-1])
    m = A.max(axis=-1)
    safe = np.where(m > 0, m, 1.0)
    acc = np.zeros(m.shape)
    for j in range(A.shape[-1]):
        t = A[..., j] / safe
        acc += t * t
    return m * np.sqrt(acc)


def _pair(kind: str, x: Sequence[float], y: Sequence[float]) -> float:
    if kind == "euclidean":
        return _euclid([a - b for a, b in zip(x, y)])
    return max(abs(a - b) for a, b in zip(x, y))


def pair_function(space: MetricSpace):
    """Return a fast ``f(x, y)`` on plain tuples, bit-identical to :func:`distance`."""
    if space.kind == "euclidean" and space.dim == 2:
        sqrt = math.sqrt

        def f(x, y):
            a = abs(x[0] - y[0])
            b = abs(x[1] - y[1])
            m = a if a >= b else b
            if m == 0.0:
                return 0.0
            t = a / m
            u = b / m
            return m * sqrt(t * t + u * u)
    elif space.kind == "euclidean":
        def f(x, y):
            return _euclid([a - b for a, b in zip(x, y)])
    elif space.dim == 1:
        def f(x, y):
            return abs(x[0] - y[0])
    elif space.dim == 2:
        def f(x, y):
            a = abs(x[0] - y[0])
            b = abs(x[1] - y[1])
            return a if a >= b else b
    else:
        def f(x, y):
            return max(abs(a - b) for a, b in zip(x, y))
    return f


def distance(space: MetricSpace, x, y) -> float:
    p, q = as_point(space, x), as_point(space, y)
    return _pair(space.kind, p.tolist(), q.tolist())


def distances(space: MetricSpace, Z, x) -> np.ndarray:
    """Distances from every row of ``Z`` to ``x``."""
    Z = as_points(space, Z)
    x = as_point(space, x)
    diff = Z - x
    if space.kind == "euclidean":
        return _euclid_rows(diff)
    return np.abs(diff).max(axis=1) if Z.shape[0] else np.zeros(0)


def pairwise(space: MetricSpace, Z) -> np.ndarray:
    Z = as_points(space, Z)
    diff = Z[:, None, :] - Z[None, :, :]
    if space.kind == "euclidean":
        return _euclid_rows(diff)
    return np.abs(diff).max(axis=2)


def set_distance(space: MetricSpace, x, Z) -> tuple[float, int]:
    """``rho(x, Z)`` and the lowest index achieving it."""
    Z = as_points(space, Z)
    if Z.shape[0] == 0:
        raise InputError("set_distance needs a nonempty set")
    dist = distances(space, Z, x)
    i = int(np.argmin(dist))
    return float(dist[i]), i


def diameter(space: MetricSpace, Z) -> float:
    Z = as_points(space, Z)
    if Z.shape[0] == 0:
        raise InputError("diameter of an empty set")
    if Z.shape[0] == 1:
        return 0.0
    return float(pairwise(space, Z).max())


def r_expansion_membership(space: MetricSpace, A, r: float, x) -> bool:
    """Whether ``x`` lies in the open r-expansion of ``A``."""
    return set_distance(space, x, A)[0] < r


# ---------------------------------------------------------------- entropy


def _max_independent_set(conflict: list[int], n: int) -> int:
    best = 0

    def grow(cands: int, size: int):
        nonlocal best
        if cands == 0:
            best = max(best, size)
            return
        if size + bin(cands).count("1") <= best:
            return
        v = (cands & -cands).bit_length() - 1
        grow(cands & ~conflict[v] & ~(1 << v), size + 1)
        # excluding v only helps if some conflicting candidate can replace it
        if cands & conflict[v]:
            grow(cands & ~(1 << v), size)

    grow((1 << n) - 1, 0)
    return best


def _min_set_cover(sets: list[int], n: int) -> int:
    full = (1 << n) - 1
    best = n

    def cover(covered: int, used: int):
        nonlocal best
        if covered == full:
            best = min(best, used)
            return
        if used + 1 >= best:
            return
        missing = ~covered & full
        e = (missing & -missing).bit_length() - 1
        for s in sets:
            if s >> e & 1:
                cover(covered | s, used + 1)

    cover(0, 0)
    return best


def greedy_packing(space: MetricSpace, U, r: float) -> np.ndarray:
    """Indices of a maximal r-packing chosen greedily in input order."""
    U = as_points(space, U)
    chosen: list[int] = []
    for i in range(U.shape[0]):
        if not chosen or distances(space, U[chosen], U[i]).min() >= r:
            chosen.append(i)
    return np.array(chosen, dtype=int)


def packing_number(space: MetricSpace, U, r: float) -> EntropyCount:
    """Largest r-packing contained in ``U``.

    Exact (maximum independent set of the "closer than r" graph) up to
    ``EXACT_CAP`` points; above that a greedy lower bound flagged inexact.
    """
    if not r > 0:
        raise InputError("r must be positive")
    U = as_points(space, U)
    n = U.shape[0]
    if n == 0:
        return EntropyCount(0, True)
    if n > EXACT_CAP:
        return EntropyCount(len(greedy_packing(space, U, r)), False)
    close = pairwise(space, U) < r
    conflict = [sum(1 << j for j in range(n) if close[i, j] and i != j) for i in range(n)]
    return EntropyCount(_max_independent_set(conflict, n), True)


def covering_number(space: MetricSpace, U, r: float) -> EntropyCount:
    """Fewest open r-balls centred in ``U`` that cover ``U``.

    Exact set-cover search up to ``EXACT_CAP`` points, else the size of a
    greedy r-net (an upper bound) flagged inexact.
    """
    if not r > 0:
        raise InputError("r must be positive")
    U = as_points(space, U)
    n = U.shape[0]
    if n == 0:
        return EntropyCount(0, True)
    if n > EXACT_CAP:
        return EntropyCount(len(greedy_packing(space, U, r)), False)
    close = pairwise(space, U) < r
    sets = [sum(1 << j for j in range(n) if close[i, j]) for i in range(n)]
    return EntropyCount(_min_set_cover(sets, n), True)
