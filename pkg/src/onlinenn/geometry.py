"""Boundary geometry: box-counting dimension, Minkowski content, rate curves."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .measure import ReferenceMeasure


def default_schedule(lo: int = 2, hi: int = 10) -> np.ndarray:
    return np.array([math.ldexp(1.0, -j) for j in range(lo, hi + 1)])


def _kd_p(kind: str):
    return 2 if kind == "euclidean" else np.inf


def greedy_net_size(points: np.ndarray, r: float, kind: str = "sup") -> int:
    """Size of a greedy r-net of the sample (centres in input order, open balls)."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] == 0:
        return 0
    tree = cKDTree(P)
    covered = np.zeros(P.shape[0], dtype=bool)
    count = 0
    rad = np.nextafter(r, 0)
    p = _kd_p(kind)
    for i in range(P.shape[0]):
        if covered[i]:
            continue
        count += 1
        covered[tree.query_ball_point(P[i], rad, p=p)] = True
    return count


def _slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(x) < 2:
        return 0.0, float(y[0]) if len(y) else 0.0
    A = np.vstack([x, np.ones_like(x)]).T
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(a), float(b)


@dataclass
class DimensionEstimate:
    slope: float
    radii: np.ndarray
    counts: np.ndarray
    truncated: bool
    extent: float

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("r,count\n")
        for r, c in zip(self.radii, self.counts):
            out.write(f"{r!r},{int(c)}\n")
        return out.getvalue()


def box_dimension_estimate(
    points,
    schedule: Optional[Sequence[float]] = None,
    kind: str = "sup",
    max_fill: float = 0.125,
) -> DimensionEstimate:
    """Least-squares slope of ``log N_r`` against ``log 1/r`` from greedy net sizes.

    Radii are ``extent * schedule`` where ``extent`` is the longest side of
    the sample's bounding box, so the estimate does not change when the sample
    is rescaled by a power of two.  Radii whose count exceeds
    ``max_fill * len(points)`` are dropped as under-sampled, with a warning.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] == 0:
        raise ValueError("empty sample")
    sched = default_schedule() if schedule is None else np.asarray(schedule, dtype=float)
    extent = float((P.max(axis=0) - P.min(axis=0)).max())
    if extent == 0.0:
        return DimensionEstimate(0.0, sched.copy(), np.ones(len(sched), dtype=int), False, 0.0)
    radii, counts = [], []
    truncated = False
    for s in sched:
        r = extent * s
        c = greedy_net_size(P, r, kind)
        if c > max_fill * P.shape[0] and len(counts) >= 2:
            truncated = True
            warnings.warn(f"sample too sparse below r={r:g}; schedule truncated", RuntimeWarning, stacklevel=2)
            break
        radii.append(r)
        counts.append(c)
    radii, counts = np.array(radii), np.array(counts)
    slope, _ = _slope(np.log(1.0 / (radii / extent)), np.log(counts))
    return DimensionEstimate(slope, radii, counts, truncated, extent)


@dataclass
class ContentEstimate:
    content: float
    radii: np.ndarray
    masses: np.ndarray
    stderrs: np.ndarray
    reliable: np.ndarray
    intercept: float
    exact: bool

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("r,mass,stderr,ratio,reliable\n")
        for r, m, s, ok in zip(self.radii, self.masses, self.stderrs, self.reliable):
            out.write(f"{r!r},{m!r},{s!r},{m / r!r},{int(ok)}\n")
        return out.getvalue()


def _union_length_1d(centers: np.ndarray, r: float, measure: ReferenceMeasure) -> float:
    a, b = measure.space.lo[0], measure.space.hi[0]
    lo = np.maximum(np.sort(centers) - r, a)
    hi = np.minimum(np.sort(centers) + r, b)
    total, cur_lo, cur_hi = 0.0, None, None
    for l, h in zip(lo, hi):
        if cur_hi is None or l > cur_hi:
            if cur_hi is not None and cur_hi > cur_lo:
                total += measure.box_mass([cur_lo], [cur_hi])
            cur_lo, cur_hi = l, h
        else:
            cur_hi = max(cur_hi, h)
    if cur_hi is not None and cur_hi > cur_lo:
        total += measure.box_mass([cur_lo], [cur_hi])
    return total


def minkowski_content_estimate(
    boundary,
    measure: ReferenceMeasure,
    schedule: Optional[Sequence[float]] = None,
    n_samples: int = 1_000_000,
    seed=0,
    min_hits: int = 400,
) -> ContentEstimate:
    """``nu(A^r) / r`` over a radius schedule, reported at the smallest reliable radius.

    One-dimensional boundaries use exact interval arithmetic.  Elsewhere
    ``nu(A^r)`` is estimated from one fixed sample of ``nu``; a radius is
    reliable when it is at least twice the boundary sample's spacing and the
    tube holds ``min_hits`` sample points.  The intercept of a linear fit of
    the ratio against ``r`` is reported as a second extrapolation.
    """
    space = measure.space
    A = np.asarray(boundary, dtype=float).reshape(-1, space.dim)
    sched = default_schedule() if schedule is None else np.asarray(schedule, dtype=float)
    k = len(sched)
    if A.shape[0] == 0:
        z = np.zeros(k)
        return ContentEstimate(0.0, sched.copy(), z, z.copy(), np.ones(k, dtype=bool), 0.0, True)
    if space.dim == 1:
        masses = np.array([_union_length_1d(A[:, 0], r, measure) for r in sched])
        ratios = masses / sched
        _, icpt = _slope(sched, ratios)
        i = int(np.argmin(sched))
        return ContentEstimate(float(ratios[i]), sched.copy(), masses, np.zeros(k), np.ones(k, dtype=bool), icpt, True)
    rng = np.random.default_rng(seed)
    X = measure.sample(rng, n_samples)
    bt = cKDTree(A)
    d, _ = bt.query(X, p=_kd_p(space.kind))
    if A.shape[0] > 1:
        nn, _ = bt.query(A, k=2, p=_kd_p(space.kind))
        spacing = float(nn[:, 1].max())
    else:
        spacing = 0.0
    hits = np.array([np.count_nonzero(d < r) for r in sched])
    frac = hits / n_samples
    masses = measure.total * frac
    stderrs = measure.total * np.sqrt(frac * (1 - frac) / n_samples)
    reliable = (sched >= 2 * spacing) & (hits >= min_hits)
    ratios = masses / sched
    if reliable.any():
        i = int(np.argmin(np.where(reliable, sched, np.inf)))
        content = float(ratios[i])
        _, icpt = _slope(sched[reliable], ratios[reliable])
    else:
        content, icpt = float("nan"), float("nan")
    return ContentEstimate(content, sched.copy(), masses, stderrs, reliable, icpt, False)


# ------------------------------------------------------------ rate bound


@dataclass
class RateBound:
    value: float
    best_r: Optional[float]
    r_star: float
    terms: dict = field(default_factory=dict)


def optimal_radius(N: float, sigma: float, m: float, b: float, c1: float, c2: float, C: float) -> float:
    """``r*_N = (C (b + c1) sigma / (N (m + c2)))^(1 / (b + c1 + 1))``."""
    return (C * (b + c1) * sigma / (N * (m + c2))) ** (1.0 / (b + c1 + 1.0))


def rate_curve_bound(
    N: int,
    sigma: float,
    m: float,
    b: float,
    c1: float,
    c2: float,
    C: float,
    r0: float,
    p: float = 0.05,
    schedule: Optional[Sequence[float]] = None,
    eps: Optional[Callable[[float], float]] = None,
) -> RateBound:
    """Mistake bound ``min{N, inf_r C r^-(b+c1) + N eps((m+c2) r) + sqrt(2N log(2N/p))}``.

    The infimum runs over a fixed radius schedule (default: quarter-octave
    steps below ``r0``), so the bound is nondecreasing in ``N`` and
    nonincreasing in ``sigma``.  The closed-form radius ``r*_N`` is reported
    alongside, with the bracket evaluated there.  ``eps`` defaults to the
    smoothed rate ``min(1, delta / sigma)``.
    """
    if min(N, sigma, m + c2, b + c1, C, r0, p) <= 0:
        raise ValueError("all parameters must be positive")
    eps = eps or (lambda delta: min(1.0, delta / sigma))
    if schedule is None:
        rs = [r0 * 2.0 ** (-j / 4) for j in range(161)]
    else:
        rs = [float(r) for r in schedule if 0 < r <= r0]
    azuma = math.sqrt(2 * N * math.log(2 * N / p))

    def bracket(r):
        cover = C * r ** (-(b + c1))
        escape = N * eps(min(1.0, (m + c2) * r))
        return cover + escape + azuma, cover, escape

    best, best_r, terms = math.inf, None, {}
    for r in rs:
        v, cover, escape = bracket(r)
        if v < best:
            best, best_r, terms = v, r, {"cover": cover, "escape": escape, "azuma": azuma}
    r_star = optimal_radius(N, sigma, m, b, c1, c2, C)
    terms["at_r_star"] = bracket(min(r_star, r0))[0]
    if N <= best:
        terms["trivial"] = float(N)
        return RateBound(float(N), None, r_star, terms)
    return RateBound(best, best_r, r_star, terms)


@dataclass
class FittedConstants:
    C: float
    r0: float
    radii: np.ndarray
    counts: np.ndarray


def fit_cover_constants(radii: Sequence[float], counts: Sequence[int], b: float, c1: float) -> FittedConstants:
    """Smallest ``C`` with ``counts <= C r^-(b+c1)`` on the schedule; ``r0`` its largest radius."""
    radii = np.asarray(radii, dtype=float)
    counts = np.asarray(counts, dtype=float)
    C = float(np.max(counts * radii ** (b + c1)))
    return FittedConstants(C, float(radii.max()), radii, counts)
