"""The online 1-nearest-neighbor rule with interchangeable exact backends.

Round 1 has an empty memory: the learner abstains and the round is scored as
a mistake.  Nearest-neighbor ties go to the lowest memory index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from sortedcontainers import SortedList

from .covertree import CoverTree
from .labels import LabelFunction
from .metric import MetricSpace, as_point, as_points, distances, pair_function


@dataclass(frozen=True)
class RoundRecord:
    n: int
    instance: np.ndarray
    nn_index: Optional[int]
    nn_distance: Optional[float]
    predicted: Optional[int]   # None means the learner abstained
    truth: int
    mistake: bool


class BruteBackend:
    """Linear scan over a preallocated, doubling array."""

    name = "brute"

    def __init__(self, space: MetricSpace):
        self.space = space
        self._buf = np.empty((64, space.dim))
        self.size = 0

    def add(self, x: np.ndarray) -> None:
        if self.size == self._buf.shape[0]:
            grown = np.empty((2 * self.size, self.space.dim))
            grown[: self.size] = self._buf
            self._buf = grown
        self._buf[self.size] = x
        self.size += 1

    def all_distances(self, x: np.ndarray) -> np.ndarray:
        return distances(self.space, self._buf[: self.size], x)

    def nearest(self, x: np.ndarray) -> tuple[float, int]:
        d = self.all_distances(x)
        i = int(np.argmin(d))
        return float(d[i]), i


class CoverTreeBackend:
    """Exact nearest neighbors through the sequential cover tree.

    Repeated points are stored once in the tree; the tree node maps back to
    the first memory index holding that point, which is also the
    lowest-index nearest neighbor.
    """

    name = "cover-tree"

    def __init__(self, space: MetricSpace):
        self.space = space
        self.tree = CoverTree(space)
        self.memory_index: list[int] = []
        self.size = 0

    def add(self, x: np.ndarray) -> None:
        res = self.tree.insert(x)
        if not res.duplicate:
            self.memory_index.append(self.size)
        self.size += 1

    def nearest(self, x: np.ndarray) -> tuple[float, int]:
        d, node = self.tree.nearest(tuple(x.tolist()))
        return d, self.memory_index[node]


class SortedBackend:
    """Exact nearest neighbors on a line by binary search."""

    name = "sorted"

    def __init__(self, space: MetricSpace):
        if space.dim != 1:
            raise ValueError("the sorted backend is one-dimensional")
        self.space = space
        self.keys = SortedList()
        self.first: dict[float, int] = {}
        self.size = 0

    def add(self, x: np.ndarray) -> None:
        v = float(x[0])
        if v not in self.first:
            self.first[v] = self.size
            self.keys.add(v)
        self.size += 1

    def nearest(self, x: np.ndarray) -> tuple[float, int]:
        v = float(x[0])
        keys = self.keys
        i = keys.bisect_left(v)
        best = (math.inf, -1)
        for j in (i - 1, i):
            if 0 <= j < len(keys):
                d = abs(v - keys[j])
                idx = self.first[keys[j]]
                if d < best[0] or (d == best[0] and idx < best[1]):
                    best = (d, idx)
        return best


BACKENDS = {"brute": BruteBackend, "cover-tree": CoverTreeBackend, "sorted": SortedBackend}


def make_backend(name: str, space: MetricSpace):
    if name == "auto":
        name = "sorted" if space.dim == 1 else "cover-tree"
    try:
        return BACKENDS[name](space)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}") from None


class NearestNeighborLearner:
    """Predict with the label of the nearest stored instance, then memorize the truth."""

    def __init__(self, space: MetricSpace, eta: LabelFunction, backend: str = "auto"):
        self.space = space
        self.eta = eta
        self.backend = make_backend(backend, space)
        self.labels: list[int] = []
        self.points: list[np.ndarray] = []
        self.n = 0

    def predict_and_update(self, x, truth: Optional[int] = None) -> RoundRecord:
        p = as_point(self.space, x)
        self.n += 1
        y = self.eta.label(p) if truth is None else int(truth)
        if self.backend.size == 0:
            rec = RoundRecord(self.n, p, None, None, None, y, True)
        else:
            d, i = self.backend.nearest(p)
            guess = self.labels[i]
            rec = RoundRecord(self.n, p, i, d, guess, y, guess != y)
        self.backend.add(p)
        self.points.append(p)
        self.labels.append(y)
        return rec

    def run(self, stream: Iterable) -> list[RoundRecord]:
        X = as_points(self.space, stream)
        truths = self.eta.labels(X) if X.shape[0] else []
        return [self.predict_and_update(x, t) for x, t in zip(X, truths)]


def mistake_rate(trace: Sequence[RoundRecord], N: Optional[int] = None) -> float:
    if N is None:
        N = len(trace)
    if N < 1 or len(trace) < N:
        raise ValueError("trace shorter than N")
    return sum(1 for r in trace[:N] if r.mistake) / N


@dataclass
class EquivalenceReport:
    rounds: int
    divergences: list = field(default_factory=list)
    ties: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.divergences


def backend_equivalence_check(
    space: MetricSpace, stream, accelerated: str = "cover-tree"
) -> EquivalenceReport:
    """Run brute force and an accelerated backend side by side on one stream.

    Distances must agree every round; indices must agree whenever the
    brute-force argmin is unique, and tie rounds are listed.
    """
    X = as_points(space, stream)
    brute = BruteBackend(space)
    fast = make_backend(accelerated, space)
    rep = EquivalenceReport(X.shape[0])
    for n, x in enumerate(X, start=1):
        if brute.size:
            d = brute.all_distances(x)
            i = int(np.argmin(d))
            dmin = float(d[i])
            fd, fi = fast.nearest(x)
            tie = int(np.count_nonzero(d == dmin)) > 1
            if tie:
                rep.ties.append(n)
            if fd != dmin or (not tie and fi != i):
                rep.divergences.append({
                    "round": n, "instance": x.tolist(),
                    "brute": [dmin, i], "accelerated": [fd, fi],
                })
        brute.add(x)
        fast.add(x)
    return rep
