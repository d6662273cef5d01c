"""Label functions, margins, mutually-labeling sets and V_r margin sets.

Every family is vectorised: ``labels(X)`` and ``margins(X)`` take ``(n, dim)``
arrays.  ``margin`` on a single point returns a :class:`MarginQuery`.
Families whose margin is only approximate report an ``error_bound``; the
certified lower bound ``value - error_bound`` is what the mutually-labeling
constructions use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .measure import MassEstimate, ReferenceMeasure
from .metric import Ball, MetricSpace, as_point, as_points, diameter, distances, seed_sequence


class UnsupportedError(RuntimeError):
    """The family does not provide the requested oracle."""


class PrecisionError(RuntimeError):
    """A construction fell below floating-point resolution."""


@dataclass(frozen=True)
class MarginQuery:
    value: float
    exact: bool
    witness: Optional[np.ndarray] = None
    error_bound: float = 0.0

    @property
    def lower(self) -> float:
        return max(0.0, self.value - self.error_bound)


class LabelFunction:
    """Base class; subclasses fill in ``labels`` and ``margins``."""

    family = "abstract"
    exact = True

    def __init__(self, space: MetricSpace):
        self.space = space

    def labels(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def margins(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def error_bound(self) -> float:
        return 0.0

    def label(self, x) -> int:
        return int(self.labels(as_point(self.space, x)[None, :])[0])

    def margin(self, x) -> MarginQuery:
        p = as_point(self.space, x)
        v = float(self.margins(p[None, :])[0])
        w = self._witness(p, v) if self.exact and 0 < v < math.inf else None
        return MarginQuery(v, self.exact, w, self.error_bound())

    def margin_lower(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(self.margins(X) - self.error_bound(), 0.0)

    def boundary_sample(self, n: int, seed=0) -> np.ndarray:
        raise UnsupportedError(f"{self.family} has no boundary sampler")

    def cross_class_pair(self, scale: float) -> tuple[np.ndarray, np.ndarray]:
        raise UnsupportedError(f"{self.family} has no cross-class pair oracle")

    def anchor(self) -> np.ndarray:
        """A point on (or next to) the decision boundary."""
        return (self.space.lo_array + self.space.hi_array) / 2

    def _witness(self, x: np.ndarray, value: float) -> Optional[np.ndarray]:
        return None

    def _check_witness(self, x, y, value) -> Optional[np.ndarray]:
        y = np.clip(y, self.space.lo_array, self.space.hi_array)
        if self.label(y) != self.label(x) and distances(self.space, y[None, :], x)[0] <= value * (1 + 1e-9):
            return y
        return None


class Threshold(LabelFunction):
    """``eta(x) = 1{x >= t}`` on an interval."""

    family = "threshold"

    def __init__(self, space: MetricSpace, t: float = 0.0):
        super().__init__(space)
        if space.dim != 1:
            raise ValueError("threshold labels live on one-dimensional spaces")
        self.t = float(t)

    def labels(self, X):
        return (as_points(self.space, X)[:, 0] >= self.t).astype(int)

    def label(self, x) -> int:
        return int(float(as_point(self.space, x)[0]) >= self.t)

    def margins(self, X):
        x = as_points(self.space, X)[:, 0]
        lo, hi = self.space.lo[0], self.space.hi[0]
        right = np.where(lo < self.t, x - self.t, np.inf)
        left = np.where(self.t <= hi, self.t - x, np.inf)
        return np.where(x >= self.t, right, left)

    def _witness(self, x, value):
        if x[0] < self.t:
            return self._check_witness(x, np.array([self.t]), value)
        return self._check_witness(x, np.array([self.t - value * 1e-10]), value)

    def boundary_sample(self, n, seed=0):
        return np.array([[self.t]])

    def anchor(self):
        return np.array([self.t])

    def cross_class_pair(self, scale):
        x = np.array([self.t + 0.45 * scale])
        x2 = np.array([self.t - 0.45 * scale])
        if not (self.label(x) == 1 and self.label(x2) == 0 and x[0] != x2[0]):
            raise PrecisionError(f"pair at scale {scale!r} is not representable around {self.t!r}")
        return x, x2


def _reach(X, w, b, lo, hi, direction, step):
    """Smallest t at which ``w . clip(x + direction * sign(w) * step * t)`` reaches b.

    Row-wise over ``X``; ``direction`` holds +1 or -1 per row.  The path is
    piecewise linear and monotone in t, so the crossing is found exactly from
    the sorted breakpoints.  Returns (t, endpoints) with t = inf where the
    target is never reached.
    """
    n, D = X.shape
    S = direction[:, None] * np.sign(w)[None, :] * step[None, :]
    bound = np.where(S > 0, hi, lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = np.where(S != 0, (bound - X) / S, np.inf)
    tb = np.maximum(tb, 0.0)
    knots = np.concatenate([np.zeros((n, 1)), np.sort(tb, axis=1)], axis=1)
    finite = np.isfinite(knots)
    kk = np.where(finite, knots, 0.0)
    F = (np.clip(X[:, None, :] + S[:, None, :] * kk[:, :, None], lo, hi) * w).sum(axis=2)
    reached = finite & (direction[:, None] * (F - b) >= 0)
    hit = reached.any(axis=1)
    j = np.argmax(reached, axis=1)
    rows = np.arange(n)
    t1, f1 = kk[rows, j], F[rows, j]
    jp = np.maximum(j - 1, 0)
    t0, f0 = kk[rows, jp], F[rows, jp]
    with np.errstate(divide="ignore", invalid="ignore"):
        tt = np.where((j > 0) & (f1 != f0), t0 + (b - f0) * (t1 - t0) / (f1 - f0), t1)
    tt = np.minimum(np.maximum(tt, t0), t1)
    t = np.where(hit, tt, np.inf)
    Y = np.clip(X + S * np.where(hit, tt, 0.0)[:, None], lo, hi)
    return t, Y


class Halfspace(LabelFunction):
    """``eta(x) = 1{w . x >= b}`` with exact margins in sup-norm and euclidean metrics."""

    family = "halfspace"

    def __init__(self, space: MetricSpace, w: Sequence[float], b: float = 0.0):
        super().__init__(space)
        self.w = np.asarray(w, dtype=float).reshape(-1)
        if self.w.shape[0] != space.dim or not np.any(self.w):
            raise ValueError("normal vector must be nonzero with the space's dimension")
        self.b = float(b)

    def labels(self, X):
        return (as_points(self.space, X) @ self.w >= self.b).astype(int)

    def _lower_region_nonempty(self) -> bool:
        lo, hi = self.space.lo_array, self.space.hi_array
        return float(np.where(self.w > 0, lo, hi) @ self.w) < self.b

    def _solve(self, X):
        lo, hi = self.space.lo_array, self.space.hi_array
        direction = np.where(X @ self.w >= self.b, -1.0, 1.0)
        step = np.abs(self.w) if self.space.kind == "euclidean" else np.ones_like(self.w)
        t, Y = _reach(X, self.w, self.b, lo, hi, direction, step)
        if self.space.kind == "euclidean":
            diff = Y - X
            acc = np.zeros(X.shape[0])
            for j in range(X.shape[1]):
                acc += diff[:, j] * diff[:, j]
            t = np.where(np.isfinite(t), np.sqrt(acc), np.inf)
        if not self._lower_region_nonempty():
            t = np.where(direction < 0, np.inf, t)
        return t, Y

    def margins(self, X):
        return self._solve(as_points(self.space, X))[0]

    def _witness(self, x, value):
        y = self._solve(x[None, :])[1][0]
        direction = -1.0 if x @ self.w >= self.b else 1.0
        u = self.w / np.abs(self.w).sum()
        for eps in (0.0, 1e-15, 1e-13, 1e-11):
            got = self._check_witness(x, y + direction * eps * max(value, 1e-300) * u, value)
            if got is not None:
                return got
        return None

    def anchor(self):
        lo, hi = self.space.lo_array, self.space.hi_array
        c = (lo + hi) / 2
        p = c - (c @ self.w - self.b) * self.w / (self.w @ self.w)
        if np.all(p >= lo) and np.all(p <= hi):
            return p
        t, Y = self._solve(c[None, :])
        return Y[0] if np.isfinite(t[0]) else c

    def _unit_normal(self):
        if self.space.kind == "euclidean":
            return self.w / np.linalg.norm(self.w)
        return self.w / np.abs(self.w).max()

    def cross_class_pair(self, scale):
        p = self.anchor()
        u = self._unit_normal()
        x, x2 = p + 0.45 * scale * u, p - 0.45 * scale * u
        if not (self.label(x) == 1 and self.label(x2) == 0):
            raise PrecisionError(f"pair at scale {scale!r} is not representable at the anchor")
        return x, x2

    def boundary_sample(self, n, seed=0):
        lo, hi = self.space.lo_array, self.space.hi_array
        if self.space.dim == 1:
            return np.array([[self.b / self.w[0]]])
        if self.space.dim != 2:
            rng = np.random.default_rng(seed)
            Z = lo + (hi - lo) * rng.random((n * 8, self.space.dim))
            j = int(np.argmax(np.abs(self.w)))
            Z[:, j] = (self.b - (Z @ self.w - Z[:, j] * self.w[j])) / self.w[j]
            Z = Z[(Z[:, j] >= lo[j]) & (Z[:, j] <= hi[j])]
            return Z[:n]
        # the hyperplane meets the rectangle in a segment
        pts = []
        for j in range(2):
            k = 1 - j
            for v in (lo[j], hi[j]):
                if self.w[k] != 0:
                    other = (self.b - self.w[j] * v) / self.w[k]
                    if lo[k] <= other <= hi[k]:
                        q = np.empty(2)
                        q[j], q[k] = v, other
                        pts.append(q)
        if len(pts) < 2:
            raise UnsupportedError("hyperplane misses the domain")
        pts = np.array(pts)
        a = pts[0]
        b = pts[int(np.argmax(np.abs(pts - a).sum(axis=1)))]
        t = np.linspace(0.0, 1.0, n)[:, None]
        return a + t * (b - a)


class UnionOfBalls(LabelFunction):
    """``eta(x) = 1`` inside any of a few disjoint open balls contained in the domain."""

    family = "union-of-balls"

    def __init__(self, space: MetricSpace, centers, radii):
        super().__init__(space)
        self.centers = as_points(space, centers)
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        if self.centers.shape[0] != self.radii.shape[0] or not np.all(self.radii > 0):
            raise ValueError("need one positive radius per centre")
        lo, hi = space.lo_array, space.hi_array
        if np.any(self.centers - self.radii[:, None] < lo) or np.any(self.centers + self.radii[:, None] > hi):
            raise ValueError("balls must lie inside the domain")
        for i in range(len(self.radii)):
            for j in range(i):
                if distances(space, self.centers[i][None, :], self.centers[j])[0] < self.radii[i] + self.radii[j]:
                    raise ValueError("balls must be disjoint")

    def _dist(self, X):
        return np.stack([distances(self.space, X, c) for c in self.centers], axis=1)

    def labels(self, X):
        X = as_points(self.space, X)
        return np.any(self._dist(X) < self.radii, axis=1).astype(int)

    def margins(self, X):
        X = as_points(self.space, X)
        D = self._dist(X)
        inside = D < self.radii
        out = np.min(D - self.radii, axis=1)
        ins = np.where(inside, self.radii - D, np.inf).min(axis=1)
        return np.where(inside.any(axis=1), ins, out)

    def _witness(self, x, value):
        D = self._dist(x[None, :])[0]
        j = int(np.argmin(D - self.radii))
        c, r, rho = self.centers[j], self.radii[j], D[j]
        if rho == 0:
            direction = np.zeros_like(x)
            direction[0] = 1.0
            return self._check_witness(x, c + r * direction, value)
        ray = (x - c) / rho
        if rho < r:
            return self._check_witness(x, c + r * ray, value)
        return self._check_witness(x, c + r * (1 - 1e-12) * ray, value)

    def anchor(self):
        p = self.centers[0].copy()
        p[0] += self.radii[0]
        return p

    def boundary_sample(self, n, seed=0):
        rng = np.random.default_rng(seed)
        per = max(1, n // len(self.radii))
        out = []
        for c, r in zip(self.centers, self.radii):
            if self.space.dim == 1:
                out.append(np.array([[c[0] - r], [c[0] + r]]))
                continue
            if self.space.kind == "euclidean":
                if self.space.dim == 2:
                    th = np.linspace(0, 2 * np.pi, per, endpoint=False)
                    dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
                else:
                    dirs = rng.standard_normal((per, self.space.dim))
                    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            else:
                dirs = rng.uniform(-1, 1, (per, self.space.dim))
                face = rng.integers(0, self.space.dim, per)
                dirs[np.arange(per), face] = np.sign(dirs[np.arange(per), face])
            out.append(c + r * dirs)
        return np.concatenate(out)


class Checkerboard(LabelFunction):
    """Parity of the cell index on a ``cells^dim`` grid over the domain."""

    family = "checkerboard"

    def __init__(self, space: MetricSpace, cells: int = 2):
        super().__init__(space)
        if cells < 1:
            raise ValueError("need at least one cell per axis")
        self.cells = int(cells)
        lo, hi = space.lo_array, space.hi_array
        self.walls = [lo[j] + (hi[j] - lo[j]) * np.arange(cells + 1) / cells for j in range(space.dim)]

    def _index(self, X):
        idx = np.empty(X.shape, dtype=int)
        for j in range(X.shape[1]):
            idx[:, j] = np.clip(np.searchsorted(self.walls[j], X[:, j], side="right") - 1, 0, self.cells - 1)
        return idx

    def labels(self, X):
        X = as_points(self.space, X)
        return self._index(X).sum(axis=1) % 2

    def margins(self, X):
        X = as_points(self.space, X)
        idx = self._index(X)
        best = np.full(X.shape[0], np.inf)
        for j in range(X.shape[1]):
            w = self.walls[j]
            i = idx[:, j]
            below = np.where(i > 0, X[:, j] - w[i], np.inf)
            above = np.where(i < self.cells - 1, w[np.minimum(i + 1, self.cells)] - X[:, j], np.inf)
            best = np.minimum(best, np.minimum(below, above))
        return best

    def _witness(self, x, value):
        idx = self._index(x[None, :])[0]
        for j in range(x.shape[0]):
            w = self.walls[j]
            i = idx[j]
            if i < self.cells - 1 and w[i + 1] - x[j] == value:
                y = x.copy()
                y[j] = w[i + 1]
                return self._check_witness(x, y, value)
            if i > 0 and x[j] - w[i] == value:
                y = x.copy()
                y[j] = w[i] - value * 1e-10
                return self._check_witness(x, y, value)
        return None

    def anchor(self):
        return np.array([w[len(w) // 2] for w in self.walls])

    def boundary_sample(self, n, seed=0):
        rng = np.random.default_rng(seed)
        lo, hi = self.space.lo_array, self.space.hi_array
        if self.cells == 1:
            return np.zeros((0, self.space.dim))
        if self.space.dim == 1:
            return self.walls[0][1:-1, None].copy()
        Z = lo + (hi - lo) * rng.random((n, self.space.dim))
        axis = rng.integers(0, self.space.dim, n)
        wall = rng.integers(1, self.cells, n)
        for j in range(self.space.dim):
            sel = axis == j
            Z[sel, j] = self.walls[j][wall[sel]]
        return Z


def koch_snowflake(depth: int, center=(0.5, 0.5), side: float = 0.6) -> np.ndarray:
    """Vertices (counter-clockwise) of the depth-``depth`` Koch snowflake polygon."""
    cx, cy = center
    R = side / math.sqrt(3.0)
    ang = np.pi / 2 + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    pts = np.stack([cx + R * np.cos(ang), cy + R * np.sin(ang)], axis=1)
    rot = np.array([[0.5, math.sqrt(3) / 2], [-math.sqrt(3) / 2, 0.5]])  # -60 degrees
    for _ in range(depth):
        p, q = pts, np.roll(pts, -1, axis=0)
        a = p + (q - p) / 3
        b = p + 2 * (q - p) / 3
        peak = a + (b - a) @ rot.T
        pts = np.stack([p, a, peak, b], axis=1).reshape(-1, 2)
    return pts


class KochSnowflake(LabelFunction):
    """Inside/outside a finite-depth Koch snowflake polygon in the plane.

    Margins come from a dense boundary sample and are approximate:
    the reported value exceeds the true margin by at most ``error_bound``.
    """

    family = "koch"
    exact = False

    def __init__(self, space: MetricSpace, depth: int = 4, center=(0.5, 0.5), side: float = 0.6, per_edge: int = 8):
        super().__init__(space)
        if space.dim != 2:
            raise ValueError("the snowflake lives in the plane")
        self.depth = int(depth)
        self.vertices = koch_snowflake(depth, center, side)
        if np.any(self.vertices < space.lo_array) or np.any(self.vertices > space.hi_array):
            raise ValueError("snowflake must fit inside the domain")
        p, q = self.vertices, np.roll(self.vertices, -1, axis=0)
        t = (np.arange(per_edge) / per_edge)[None, :, None]
        self._dense = (p[:, None, :] + t * (q - p)[:, None, :]).reshape(-1, 2)
        spacing = float(np.linalg.norm(q - p, axis=1).max()) / per_edge
        self._err = spacing / 2
        self._tree = cKDTree(self._dense)
        self._p = 2 if space.kind == "euclidean" else np.inf

    def error_bound(self):
        return self._err

    def labels(self, X):
        X = as_points(self.space, X)
        out = np.zeros(X.shape[0], dtype=bool)
        p, q = self.vertices, np.roll(self.vertices, -1, axis=0)
        for s in range(0, X.shape[0], 2048):
            px, py = X[s:s + 2048, 0:1], X[s:s + 2048, 1:2]
            crosses = (p[None, :, 1] > py) != (q[None, :, 1] > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = (q[:, 0] - p[:, 0]) * (py - p[:, 1]) / (q[:, 1] - p[:, 1]) + p[:, 0]
            out[s:s + 2048] = (np.sum(crosses & (px < xint), axis=1) % 2).astype(bool)
        return out.astype(int)

    def margins(self, X):
        X = as_points(self.space, X)
        d, _ = self._tree.query(X, p=self._p)
        return np.asarray(d, dtype=float)

    def anchor(self):
        return self.vertices[0].copy()

    def boundary_sample(self, n, seed=0):
        return self._dense.copy()


FAMILIES = {
    "threshold": Threshold,
    "halfspace": Halfspace,
    "union-of-balls": UnionOfBalls,
    "checkerboard": Checkerboard,
    "koch": KochSnowflake,
}


# ------------------------------------------------------ module operations


def label(eta: LabelFunction, x) -> int:
    return eta.label(x)


def margin(eta: LabelFunction, x) -> MarginQuery:
    return eta.margin(x)


def v_r_membership(eta: LabelFunction, x, r: float) -> bool:
    if not r > 0:
        raise ValueError("r must be positive")
    return eta.margin(x).value >= r


@dataclass
class MLCheck:
    ok: bool
    witness: Optional[np.ndarray]
    diameter: float
    min_margin: float


def _sample_ball(space: MetricSpace, ball: Ball, n: int, rng) -> np.ndarray:
    lo = np.maximum(ball.center - ball.radius, space.lo_array)
    hi = np.minimum(ball.center + ball.radius, space.hi_array)
    out = []
    have = 0
    while have < n:
        Z = lo + (hi - lo) * rng.random((2 * n, space.dim))
        Z = Z[distances(space, Z, ball.center) < ball.radius]
        out.append(Z)
        have += Z.shape[0]
    return np.concatenate(out)[:n]


def is_mutually_labeling(eta: LabelFunction, U, n_probes: int = 512, seed=0) -> MLCheck:
    """Check ``diam(U) < margin(x)`` for the points of ``U``.

    For a :class:`Ball` the diameter is taken as ``2 * radius`` and margins are
    probed at the centre plus ``n_probes`` seeded uniform points, so a ``True``
    answer for a ball is one-sided evidence.
    """
    space = eta.space
    if isinstance(U, Ball):
        rng = np.random.default_rng(seed)
        probes = np.vstack([U.center[None, :], _sample_ball(space, U, n_probes, rng)])
        diam = 2 * U.radius
    else:
        probes = as_points(space, U)
        if probes.shape[0] == 0:
            raise ValueError("U must be nonempty")
        diam = diameter(space, probes)
    m = eta.margin_lower(probes)
    i = int(np.argmin(m))
    ok = bool(diam < m[i])
    return MLCheck(ok, None if ok else probes[i], diam, float(m[i]))


def mutually_labeling_ball(eta: LabelFunction, x, safety: float = 0.99) -> Optional[Ball]:
    """``B(x, safety * margin(x) / 3)``, or None at boundary points.

    None is also returned when the radius underflows to zero.
    """
    if not 0 < safety < 1:
        raise ValueError("safety must lie in (0, 1)")
    m = eta.margin(x).lower
    if not m > 0:
        return None
    if math.isinf(m):
        m = eta.space.diameter * 3
    rad = safety * m / 3
    return Ball(as_point(eta.space, x), rad) if rad > 0 else None


@dataclass
class MLCover:
    balls: list
    count: int
    covered: MassEstimate
    leftover: MassEstimate
    complete: bool


def _kd_p(space: MetricSpace):
    return 2 if space.kind == "euclidean" else np.inf


def ml_covering_number_estimate(
    eta: LabelFunction,
    measure: ReferenceMeasure,
    r: float,
    budget: int = 20_000,
    n_samples: int = 100_000,
    tol: float = 1e-3,
    seed=0,
    safety: float = 0.99,
    max_rounds: int = 8,
) -> MLCover:
    """Greedy cover of ``V_r`` by mutually-labeling balls.

    Sample points of ``V_r`` are taken in decreasing order of margin and each
    uncovered one becomes the centre of ``B(x, safety * margin(x) / 3)``.  A
    point whose margin lies in ``[2^k r, 2^(k+1) r)`` therefore gets a radius of
    at least ``safety * 2^k r / 3``, so the cover is no larger than the
    layer-by-layer one.  Fresh samples are drawn until the uncovered part of
    ``V_r`` has estimated mass below ``tol``.  The count is an upper bound on
    the mutually-labeling covering number.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    space = measure.space
    p = _kd_p(space)
    ss = seed_sequence(seed)
    centers: list[np.ndarray] = []
    radii: list[float] = []
    pending = np.zeros((0, space.dim))
    pending_m = np.zeros(0)
    leftover = MassEstimate(0.0, 0.0, 0, False)
    complete = False
    for child in ss.spawn(max_rounds):
        rng = np.random.default_rng(child)
        X = measure.sample(rng, n_samples)
        m = eta.margin_lower(X)
        inV = m >= r
        # estimate what the current cover misses on a fresh sample
        miss = inV.copy()
        if centers:
            tree = cKDTree(X[inV])
            idx = np.nonzero(inV)[0]
            for c, rad in zip(centers, radii):
                hit = tree.query_ball_point(c, np.nextafter(rad, 0), p=p)
                miss[idx[hit]] = False
        total = measure.total
        frac = float(miss.mean())
        leftover = MassEstimate(total * frac, total * math.sqrt(frac * (1 - frac) / n_samples), n_samples, False)
        if frac < tol:
            complete = True
            break
        pending = np.vstack([pending, X[miss]])
        pending_m = np.concatenate([pending_m, m[miss]])
        pending, pending_m = _greedy_cover(space, pending, pending_m, safety, centers, radii, budget, p)
        if len(centers) >= budget:
            break
    cov_val = max(0.0, _mass_V(eta, measure, r, n_samples, ss) - leftover.value)
    vr = MassEstimate(cov_val, leftover.stderr, n_samples, False)
    balls = [Ball(c, rad) for c, rad in zip(centers, radii)]
    return MLCover(balls, len(balls), vr, leftover, complete)


def _mass_V(eta, measure, r, n_samples, ss) -> float:
    rng = np.random.default_rng(ss.spawn(1)[0])
    X = measure.sample(rng, n_samples)
    return measure.total * float((eta.margin_lower(X) >= r).mean())


def _greedy_cover(space, P, M, safety, centers, radii, budget, p):
    if P.shape[0] == 0:
        return P, M
    M = np.where(np.isinf(M), space.diameter * 3, M)
    covered = np.zeros(P.shape[0], dtype=bool)
    tree = cKDTree(P)
    for i in np.argsort(-M, kind="stable"):
        if covered[i]:
            continue
        if len(centers) >= budget:
            break
        rad = safety * M[i] / 3
        centers.append(P[i].copy())
        radii.append(rad)
        covered[tree.query_ball_point(P[i], np.nextafter(rad, 0), p=p)] = True
        covered[i] = True
    return P[~covered], M[~covered]


@dataclass
class BoundaryDistanceReport:
    max_discrepancy: float
    n_probes: int
    n_boundary: int


def margin_equals_boundary_distance_check(
    eta: LabelFunction, n_probes: int = 1000, seed=0, n_boundary: int = 10_000
) -> BoundaryDistanceReport:
    """Compare margins with distances to a dense boundary sample (euclidean spaces)."""
    space = eta.space
    if space.kind not in ("euclidean", "interval"):
        raise UnsupportedError("margin-as-boundary-distance is only checked in euclidean spaces")
    B = eta.boundary_sample(n_boundary, seed=seed)
    if B.shape[0] == 0:
        raise UnsupportedError("empty boundary")
    rng = np.random.default_rng(seed)
    X = space.lo_array + (space.hi_array - space.lo_array) * rng.random((n_probes, space.dim))
    m = eta.margins(X)
    d, _ = cKDTree(B).query(X, p=_kd_p(space))
    return BoundaryDistanceReport(float(np.max(np.abs(m - d))), n_probes, B.shape[0])
