"""The finite reference measure: exact box/ball masses and Monte Carlo."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .metric import Ball, MetricSpace, as_point, as_points, distances

# default Monte Carlo slack, in standard errors
MC_SLACK = 3.0


@dataclass(frozen=True)
class MassEstimate:
    value: float
    stderr: float
    n_samples: int
    exact: bool

    def upper(self, k: float = MC_SLACK) -> float:
        return self.value + k * self.stderr

    def lower(self, k: float = MC_SLACK) -> float:
        return self.value - k * self.stderr


def _flat(v) -> list:
    if type(v) is list:
        return v
    if type(v) is np.ndarray and v.ndim == 1:
        return v.tolist()
    return np.ravel(v).tolist()


def _overlap(lo, hi, blo, bhi) -> float:
    side = np.minimum(hi, bhi) - np.maximum(lo, blo)
    if np.any(side <= 0):
        return 0.0
    return float(np.prod(side))


@dataclass
class ReferenceMeasure:
    """Weighted mixture of uniform laws on boxes (Lebesgue on the domain by default).

    The total mass is the sum of the weights; the default is a probability
    measure.
    """

    space: MetricSpace
    boxes: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def __post_init__(self):
        if not self.boxes:
            self.boxes = [(self.space.lo_array, self.space.hi_array)]
            self.weights = [1.0]
        self.boxes = [(np.asarray(a, dtype=float), np.asarray(b, dtype=float)) for a, b in self.boxes]
        self.weights = [float(w) for w in self.weights]
        if len(self.weights) != len(self.boxes) or any(w <= 0 for w in self.weights):
            raise ValueError("mixture weights must be positive, one per box")
        for a, b in self.boxes:
            if np.any(a < self.space.lo_array) or np.any(b > self.space.hi_array) or np.any(a >= b):
                raise ValueError("mixture boxes must be nondegenerate and inside the domain")
        self._lo, self._hi = self.boxes[0][0].tolist(), self.boxes[0][1].tolist()
        self._kind = "lebesgue" if len(self.boxes) == 1 and self._is_domain(0) else "mixture"

    @classmethod
    def lebesgue(cls, space: MetricSpace) -> "ReferenceMeasure":
        return cls(space)

    @property
    def kind(self) -> str:
        return self._kind

    def _is_domain(self, i: int) -> bool:
        a, b = self.boxes[i]
        return bool(np.array_equal(a, self.space.lo_array) and np.array_equal(b, self.space.hi_array))

    @property
    def total(self) -> float:
        return float(sum(self.weights))

    def box_mass(self, lo, hi) -> float:
        if len(self.boxes) == 1:
            # plain floats: this sits on the per-round path of attack processes
            m = self.weights[0]
            for l, h, a, b in zip(_flat(lo), _flat(hi), self._lo, self._hi):
                side = min(h, b) - max(l, a)
                if side <= 0:
                    return 0.0
                m *= side / (b - a)
            return m
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        m = 0.0
        for w, (a, b) in zip(self.weights, self.boxes):
            m += w * _overlap(lo, hi, a, b) / float(np.prod(b - a))
        return m

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.sample_in_box(rng, self.space.lo_array, self.space.hi_array, n)

    def sample_in_box(self, rng: np.random.Generator, lo, hi, n: int) -> np.ndarray:
        """Draw from the measure restricted to the box ``[lo, hi]`` and renormalised."""
        if len(self.boxes) == 1:
            l2 = [max(l, a) for l, a in zip(_flat(lo), self._lo)]
            h2 = [min(h, b) for h, b in zip(_flat(hi), self._hi)]
            if any(h <= l for l, h in zip(l2, h2)):
                raise ValueError("box has zero mass")
            if n == 1:
                # one draw per round on the attack path: stay in plain floats
                u = rng.random((1, len(l2))).tolist()[0]
                return np.array([[l + (h - l) * v for l, h, v in zip(l2, h2, u)]])
            l2 = np.array(l2)
            return l2 + (np.array(h2) - l2) * rng.random((n, self.space.dim))
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        parts = []
        for w, (a, b) in zip(self.weights, self.boxes):
            parts.append(w * _overlap(lo, hi, a, b) / float(np.prod(b - a)))
        p = np.array(parts)
        if p.sum() <= 0:
            raise ValueError("box has zero mass")
        which = rng.choice(len(p), size=n, p=p / p.sum())
        out = np.empty((n, self.space.dim))
        for i, (a, b) in enumerate(self.boxes):
            sel = which == i
            k = int(sel.sum())
            if k:
                l2, h2 = np.maximum(lo, a), np.minimum(hi, b)
                out[sel] = l2 + (h2 - l2) * rng.random((k, self.space.dim))
        return out


def mass_of_indicator(
    measure: ReferenceMeasure,
    indicator: Callable[[np.ndarray], np.ndarray],
    n_samples: int,
    seed,
) -> MassEstimate:
    """Monte Carlo mass of ``{x : indicator(x)}``.

    ``indicator`` receives an ``(n, dim)`` array and returns booleans.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    X = measure.sample(rng, n_samples)
    hits = np.asarray(indicator(X), dtype=bool)
    p = float(hits.mean())
    total = measure.total
    return MassEstimate(total * p, total * math.sqrt(p * (1.0 - p) / n_samples), n_samples, False)


def mass_of_ball(measure: ReferenceMeasure, ball: Ball, n_samples: int = 100_000, seed=0) -> MassEstimate:
    space = measure.space
    c = as_point(space, ball.center)
    if space.kind != "euclidean" or space.dim == 1:
        # sup-norm balls are boxes; the open/closed distinction has no mass
        m = measure.box_mass(c - ball.radius, c + ball.radius)
        return MassEstimate(m, 0.0, 0, True)
    return mass_of_indicator(measure, lambda X: distances(space, X, c) < ball.radius, n_samples, seed)


@dataclass
class DoublingReport:
    passed: bool
    worst_ratio: float
    witness: Optional[tuple]
    n_trials: int


def certify_upper_doubling(
    measure: ReferenceMeasure,
    space: MetricSpace,
    c: float,
    d: float,
    n_trials: int = 1000,
    seed=0,
    n_samples: int = 20_000,
) -> DoublingReport:
    """Probe ``nu(B(x, r)) <= c r^d`` at random centres and radii.

    Estimated masses get ``MC_SLACK`` standard errors of slack.  The worst
    ratio ``mass / (c r^d)`` is reported with its ``(x, r, mass)`` witness.
    """
    if not (c > 0 and d > 0):
        raise ValueError("c and d must be positive")
    rng = np.random.default_rng(seed)
    centers = measure.sample(rng, n_trials)
    radii = space.diameter * (1.0 - rng.random(n_trials))
    worst, witness, ok = -math.inf, None, True
    for i in range(n_trials):
        est = mass_of_ball(measure, Ball(centers[i], radii[i]), n_samples, seed=(i, 7))
        cap = c * radii[i] ** d
        ratio = est.value / cap
        if est.lower() > cap:
            ok = False
        if ratio > worst:
            worst, witness = ratio, (centers[i].copy(), float(radii[i]), est.value)
    return DoublingReport(ok, worst, None if ok else witness, n_trials)
