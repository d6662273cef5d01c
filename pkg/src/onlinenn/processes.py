"""Seeded instance-generating processes and indicator processes.

Each generator exposes the conditional law of the next instance through
``law(history, trace)``; ``next_instance`` draws from it with the
generator's own stream.  Audits resample the same law with an independent
stream to estimate conditional hit probabilities.

``history`` is the ``(n - 1, dim)`` array of past instances and ``trace``
the learner's list of :class:`RoundRecord` (its public output).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .labels import LabelFunction, UnsupportedError
from .learner import NearestNeighborLearner, RoundRecord
from .measure import MC_SLACK, ReferenceMeasure, _flat
from .metric import MetricSpace, as_point, as_points, distances, pair_function, seed_sequence

KINDS = ("iid", "smoothed", "uniformly-dominated", "worst-case-threshold", "worst-case-general")
MODES = ("oblivious", "adaptive-to-history", "adaptive-to-learner")


# ------------------------------------------------------------------- laws


class Law:
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError


@dataclass
class MeasureLaw(Law):
    measure: ReferenceMeasure

    def sample(self, rng, size):
        return self.measure.sample(rng, size)


@dataclass
class BoxLaw(Law):
    """``nu`` restricted to the box ``[lo, hi]`` and renormalised."""

    measure: ReferenceMeasure
    lo: np.ndarray
    hi: np.ndarray
    mass: float

    def sample(self, rng, size):
        return self.measure.sample_in_box(rng, self.lo, self.hi, size)


@dataclass
class PointMass(Law):
    point: np.ndarray

    def sample(self, rng, size):
        return np.repeat(self.point[None, :], size, axis=0)


@dataclass
class DominatedLaw(Law):
    """Mixture over region masses ``M = sigma * U^(1/alpha)``, ``U`` uniform on (0, 1].

    Each draw picks its own ``M`` and samples ``nu`` restricted to the box of
    mass ``M`` around ``center``.  The conditional probability of a set of
    mass ``delta`` is then at most ``min(1, (delta/sigma)^alpha / (1 - alpha))``.
    """

    measure: ReferenceMeasure
    center: np.ndarray
    sigma: float
    alpha: float

    def sample(self, rng, size):
        out = np.empty((size, self.measure.space.dim))
        u = 1.0 - rng.random(size)
        masses = self.sigma * u ** (1.0 / self.alpha)
        for i, m in enumerate(masses):
            lo, hi = attack_box(self.measure, self.center, m)
            out[i] = self.measure.sample_in_box(rng, lo, hi, 1)[0]
        return out


def attack_box(measure: ReferenceMeasure, center, mass: float) -> tuple[np.ndarray, np.ndarray]:
    """A box inside the domain, near ``center``, with ``nu``-mass at least ``mass``.

    Sides are proportional to the domain's; the box is shifted (not clipped)
    to stay inside the domain.  Masses at or above the total give the domain.
    """
    space = measure.space
    if mass >= measure.total:
        return space.lo_array, space.hi_array
    # plain floats: this runs once per round
    dlo, dhi = space.lo, space.hi
    c = [min(max(v, a), b) for v, a, b in zip(_flat(center), dlo, dhi)]

    def box(f):
        f = min(1.0, f)
        lo, hi = [], []
        for v, a, b in zip(c, dlo, dhi):
            side = (b - a) * f
            l = min(max(v - side / 2, a), b - side)
            lo.append(l)
            hi.append(min(l + side, b))
        return lo, hi

    f = (mass / measure.total) ** (1.0 / space.dim) * (1 + 1e-12)
    lo, hi = box(f)
    if measure.kind != "lebesgue" and measure.box_mass(lo, hi) < mass:
        # non-uniform mixtures: grow until the mass is reached
        a, b = f, 1.0
        if measure.box_mass(*box(b)) < mass:
            return space.lo_array, space.hi_array
        for _ in range(200):
            mid = (a + b) / 2
            if measure.box_mass(*box(mid)) >= mass:
                b = mid
            else:
                a = mid
        lo, hi = box(b)
    return np.array(lo), np.array(hi)


# -------------------------------------------------------------- generators


class ProcessGenerator:
    """A seeded instance process of one of the supported classes."""

    kind = "abstract"

    def __init__(self, space: MetricSpace, measure: ReferenceMeasure, eta: Optional[LabelFunction], seed=0):
        self.space = space
        self.measure = measure
        self.eta = eta
        self.rng = np.random.default_rng(seed)
        self.last_region: Optional[tuple] = None

    def law(self, history: np.ndarray, trace: Sequence[RoundRecord]) -> Law:
        raise NotImplementedError

    def next_instance(self, history, trace=()) -> np.ndarray:
        law = self.law(history, trace)
        self.last_region = (law.lo, law.hi, law.mass) if isinstance(law, BoxLaw) else None
        x = law.sample(self.rng, 1)[0]
        self._advance(x)
        return x

    def _advance(self, x) -> None:
        pass

    def rate(self, delta: float) -> Optional[float]:
        """The domination rate ``eps(delta)``, or None when there is none."""
        return None


class IIDProcess(ProcessGenerator):
    kind = "iid"

    def law(self, history, trace):
        return MeasureLaw(self.measure)

    def rate(self, delta):
        return min(1.0, delta / self.measure.total)


class _Centered(ProcessGenerator):
    """Shared attack-centre policies."""

    def __init__(self, space, measure, eta, seed=0, mode="adaptive-to-learner", center=None):
        super().__init__(space, measure, eta, seed)
        if mode not in MODES:
            raise ValueError(f"unknown history-access mode {mode!r}")
        self.mode = mode
        if center is None:
            center = eta.anchor() if eta is not None else (space.lo_array + space.hi_array) / 2
        self.center = as_point(space, center)
        self._scanned = 0
        self._last_mistake: Optional[RoundRecord] = None
        self._midpoint = None

    def attack_center(self, history, trace) -> np.ndarray:
        if self.mode == "adaptive-to-history":
            return np.asarray(history[-1], dtype=float) if len(history) else self.center
        if self.mode == "adaptive-to-learner":
            if self._scanned > len(trace):
                self._scanned, self._last_mistake = 0, None
            last = self._last_mistake
            for rec in trace[self._scanned:]:
                if rec.mistake and rec.nn_index is not None:
                    last = rec
            self._scanned = len(trace)
            if last is not self._last_mistake:
                self._last_mistake = last
                mid = (last.instance + np.asarray(history[last.nn_index], dtype=float)) / 2
                self._midpoint = np.clip(mid, self.space.lo_array, self.space.hi_array)
            if last is not None:
                return self._midpoint
        return self.center


class SmoothedProcess(_Centered):
    """Uniform on an attack box of mass ``sigma``: density at most ``1/sigma``."""

    kind = "smoothed"

    def __init__(self, space, measure, eta, seed=0, sigma=0.1, mode="adaptive-to-learner", center=None):
        super().__init__(space, measure, eta, seed, mode, center)
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)

    def law(self, history, trace):
        if self.sigma >= self.measure.total:
            lo, hi = self.space.lo_array, self.space.hi_array
        else:
            lo, hi = attack_box(self.measure, self.attack_center(history, trace), self.sigma)
        return BoxLaw(self.measure, lo, hi, self.measure.box_mass(lo, hi))

    def rate(self, delta):
        return min(1.0, delta / min(self.sigma, self.measure.total))


class DominatedProcess(_Centered):
    """Uniformly dominated at rate ``min(1, (delta/sigma)^alpha / (1 - alpha))``; smoothed when ``alpha = 1``."""

    kind = "uniformly-dominated"

    def __init__(self, space, measure, eta, seed=0, sigma=0.1, alpha=0.5, mode="adaptive-to-learner", center=None):
        super().__init__(space, measure, eta, seed, mode, center)
        if not (sigma > 0 and 0 < alpha <= 1):
            raise ValueError("need sigma > 0 and alpha in (0, 1]")
        self.sigma, self.alpha = float(sigma), float(alpha)

    def law(self, history, trace):
        c = self.attack_center(history, trace)
        if self.alpha == 1.0:
            lo, hi = attack_box(self.measure, c, self.sigma)
            return BoxLaw(self.measure, lo, hi, self.measure.box_mass(lo, hi))
        return DominatedLaw(self.measure, c, self.sigma, self.alpha)

    def rate(self, delta):
        q = (delta / self.sigma) ** self.alpha
        if self.alpha < 1.0:
            q /= 1.0 - self.alpha
        return min(1.0, q)


class WorstCaseThreshold(ProcessGenerator):
    """The deterministic sequence ``X_n = (-1/3)^n`` (correctly rounded)."""

    kind = "worst-case-threshold"

    def __init__(self, space, measure, eta=None, seed=0):
        super().__init__(space, measure, eta, seed)
        if space.dim != 1 or not (space.lo[0] <= -1 / 3 and space.hi[0] >= 1 / 9):
            raise ValueError("needs an interval containing [-1/3, 1/9]")

    @staticmethod
    def value(n: int) -> float:
        return float(Fraction(-1, 3) ** n)

    def law(self, history, trace):
        return PointMass(np.array([self.value(len(history) + 1)]))


class WorstCaseGeneral(ProcessGenerator):
    """Pairs of differently labeled points closer than a third of the history's separation.

    The second point of every pair has a differently labeled nearest
    neighbor, so every even round is a mistake.
    """

    kind = "worst-case-general"

    def __init__(self, space, measure, eta: LabelFunction, seed=0):
        super().__init__(space, measure, eta, seed)
        probe = min(space.diameter, 1.0) * 1e-3
        eta.cross_class_pair(probe)  # raises UnsupportedError early
        self._pending: Optional[np.ndarray] = None
        self._pair = pair_function(space)
        self._seen = 0
        self._rmin = math.inf

    def _update_separation(self, history: np.ndarray) -> float:
        H = as_points(self.space, history)
        for k in range(self._seen, H.shape[0]):
            if k:
                d = distances(self.space, H[:k], H[k])
                d = d[d > 0]
                if d.size:
                    self._rmin = min(self._rmin, float(d.min()))
        self._seen = H.shape[0]
        return self._rmin if math.isfinite(self._rmin) else self.space.diameter

    def _new_pair(self, history) -> tuple[np.ndarray, np.ndarray]:
        r = self._update_separation(history)
        x, x2 = self.eta.cross_class_pair(r / 3)
        H = as_points(self.space, history)
        if H.shape[0] == 0:
            return x, x2
        dx = distances(self.space, H, x)
        dx2 = distances(self.space, H, x2)
        i, i2 = int(np.argmin(dx)), int(np.argmin(dx2))
        if i != i2:
            # the point farther than r/3 from its own nearest neighbor goes second
            return (x, x2) if dx2[i2] > r / 3 else (x2, x)
        z_label = self.eta.label(H[i])
        return (x, x2) if self.eta.label(x2) != z_label else (x2, x)

    def law(self, history, trace):
        if self._pending is not None:
            return PointMass(self._pending[1])
        first, second = self._new_pair(history)
        self._staged = (first, second)
        return PointMass(first)

    def next_instance(self, history, trace=()):
        if self._pending is not None:
            x = self._pending[1]
            self._pending = None
            return x.copy()
        self.law(history, trace)
        self._pending = self._staged
        return self._staged[0].copy()


GENERATORS = {
    "iid": IIDProcess,
    "smoothed": SmoothedProcess,
    "uniformly-dominated": DominatedProcess,
    "worst-case-threshold": WorstCaseThreshold,
    "worst-case-general": WorstCaseGeneral,
}


def make_generator(kind: str, space, measure, eta, seed=0, **params) -> ProcessGenerator:
    try:
        cls = GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown process class {kind!r}") from None
    return cls(space, measure, eta, seed, **params)


# ---------------------------------------------------------------- audits


@dataclass
class TestSet:
    """A set with known mass, given by a vectorised membership test."""

    __test__ = False  # not a pytest class

    indicator: Callable[[np.ndarray], np.ndarray]
    mass: float
    name: str = ""

    @classmethod
    def box(cls, measure: ReferenceMeasure, lo, hi, name: str = "") -> "TestSet":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

        def ind(X):
            return np.all((X >= lo) & (X < hi), axis=1)

        return cls(ind, measure.box_mass(lo, hi), name or f"box{lo.tolist()}-{hi.tolist()}")


@dataclass
class SmoothnessReport:
    passed: bool
    worst: dict
    per_set: list
    violations: list


def smoothness_audit(
    make: Callable[[int], ProcessGenerator],
    sets: Sequence[TestSet],
    horizon: int,
    trials: int = 1,
    seed=0,
    n_resample: int = 2000,
    rate: Optional[Callable[[float], float]] = None,
    eta: Optional[LabelFunction] = None,
    every: int = 1,
) -> SmoothnessReport:
    """Estimate ``sup_n Pr(X_n in A | past)`` by resampling each round's conditional law.

    ``make(trial)`` builds a fresh generator.  The process is driven by a
    1-NN learner so learner-adaptive policies see a genuine trace.  A set is
    flagged when the estimate exceeds ``rate(mass) + MC_SLACK * stderr``.
    """
    ss = seed_sequence(seed)
    per = [{"name": s.name, "mass": s.mass, "sup_rate": 0.0, "bound": None, "round": None, "trial": None} for s in sets]
    violations = []
    for t, child in enumerate(ss.spawn(trials)):
        audit_rng = np.random.default_rng(child)
        gen = make(t)
        eps = rate or gen.rate
        if eps(0.5) is None:
            raise ValueError("process has no domination rate; pass rate= explicitly")
        label_fn = eta or gen.eta
        learner = NearestNeighborLearner(gen.space, label_fn, "brute") if label_fn is not None else None
        buf = np.zeros((horizon, gen.space.dim))
        trace: list = []
        for n in range(1, horizon + 1):
            history = buf[: n - 1]
            if (n - 1) % every == 0:
                law = gen.law(history, trace)
                Z = law.sample(audit_rng, n_resample)
                for k, s in enumerate(sets):
                    hits = np.asarray(s.indicator(Z), dtype=bool)
                    p = float(hits.mean())
                    se = math.sqrt(p * (1 - p) / n_resample)
                    bound = eps(s.mass)
                    per[k]["bound"] = bound
                    if p > per[k]["sup_rate"]:
                        per[k].update(sup_rate=p, round=n, trial=t)
                    if p > bound + MC_SLACK * se:
                        violations.append({"set": s.name, "trial": t, "round": n, "rate": p, "bound": bound, "stderr": se})
            x = gen.next_instance(history, trace)
            if learner is not None:
                trace.append(learner.predict_and_update(x))
            buf[n - 1] = x
    worst = max(per, key=lambda e: e["sup_rate"] - e["bound"]) if per else {}
    return SmoothnessReport(not violations, worst, per, violations)


# ------------------------------------------------------------ indicators


@dataclass
class IndicatorStats:
    k: np.ndarray           # k(n) for n = 1..N
    taus: list              # tau_k for k = 1..k(N)
    rate: float

    def tau(self, k: int) -> Optional[int]:
        return self.taus[k - 1] if 1 <= k <= len(self.taus) else None


def indicator_stats(flags: Sequence, horizon: Optional[int] = None) -> IndicatorStats:
    """Counter ``k(n)``, stopping times ``tau_k`` and the rate ``k(N)/N`` of a 0/1 stream."""
    I = np.asarray(flags, dtype=int)
    if horizon is not None:
        if len(I) < horizon:
            raise ValueError("stream shorter than the horizon")
        I = I[:horizon]
    if I.size and not np.all((I == 0) | (I == 1)):
        raise ValueError("indicator values must be 0 or 1")
    k = np.cumsum(I)
    taus = (np.nonzero(I)[0] + 1).tolist()
    return IndicatorStats(k, taus, float(k[-1]) / len(I) if len(I) else 0.0)


@dataclass
class IndicatorProcess:
    """``I_n = 1{X_n in A}`` for a box ``A = [lo, hi)``; a universal box flags everything."""

    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    def __call__(self, x) -> int:
        if self.lo is None:
            f = 1
        else:
            x = np.asarray(x, dtype=float)
            f = int(bool(np.all(x >= self.lo) and np.all(x < self.hi)))
        self.flags.append(f)
        return f

    def mass(self, measure: ReferenceMeasure) -> float:
        if self.lo is None:
            return measure.total
        return measure.box_mass(self.lo, self.hi)

    def stats(self, horizon: Optional[int] = None) -> IndicatorStats:
        return indicator_stats(self.flags, horizon)
