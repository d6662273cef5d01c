"""Sequentially constructed cover trees, their neighbor map and tail sets.

Distances are rescaled to a unit-diameter domain, ``s = rho / R`` with ``R``
the domain diameter, and every dyadic comparison ``s < 2^-l`` is done on
integers through :func:`top_rank`, so ranks are exact.

Node indices are 0-based insertion positions; node 0 is the root.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .measure import MassEstimate, ReferenceMeasure
from .metric import MetricSpace, as_point, as_points, packing_number, pair_function, pairwise


class DuplicateError(ValueError):
    """The query coincides with a node of the tree."""


_NO_TOP = 1 << 30  # top rank of a zero distance


def top_rank(s: float) -> int:
    """Largest integer ``l`` with ``s < 2^-l`` (for ``s > 0``)."""
    return -math.frexp(s)[1]


@dataclass(frozen=True)
class InsertResult:
    index: Optional[int]
    rank: Optional[int]
    parent: Optional[int]
    duplicate: bool = False
    # set when the point sits at scaled distance exactly 1 from the root
    root_edge: bool = False


@dataclass(frozen=True)
class NeighborBall:
    center: int
    point: np.ndarray
    level: int
    radius: float          # original units
    scaled_radius: float   # 2^-level


class CoverTree:
    """Cover tree built by sequential insertion.

    ``rank[k]`` is the insertion rank ``L_k``: the smallest ``l >= 1`` at which
    no existing ball ``B(a_j, 2^-l)`` with ``L_j <= l`` contains the new point
    (the root has rank 0).  ``parent[k]`` is the lowest-index node whose ball
    of radius ``2^-(L_k - 1)`` contains it.
    """

    def __init__(self, space: MetricSpace):
        self.space = space
        self.R = space.diameter
        self._pair = pair_function(space)
        self._slack = 1e-12 * self.R
        self.points: list[tuple] = []
        self.rank: list[int] = []
        self.parent: list[Optional[int]] = []
        # children grouped by rank; a group's reach bounds the distance from
        # the node to every descendant through that group
        self.groups: list[dict[int, list[int]]] = []
        self.group_reach: list[dict[int, float]] = []
        # per node, (rank, members) in increasing rank, for early exits
        self._ordered: list[list] = []
        # a child of rank L and all its descendants lie within 4 R 2^-L
        self._far = [4 * self.R * math.ldexp(1.0, -L) * (1 + 1e-9) for L in range(1100)]
        self._thr = [self.R * math.ldexp(1.0, -L) for L in range(1100)]
        self.reach: list[float] = []   # max distance from a node to its descendants
        self.duplicates: list[tuple] = []
        self.root_edges: list[int] = []

    def __len__(self) -> int:
        return len(self.points)

    def scaled(self, rho: float) -> float:
        return rho / self.R

    def point(self, k: int) -> np.ndarray:
        return np.array(self.points[k])

    # ------------------------------------------------------------ insertion

    def _covering_nodes(self, x: tuple, allow_duplicate: bool = False):
        """Nodes ``j`` with ``s(x, a_j) < 2^-L_j``, as (L_j, top_j, j).

        Returns None when ``x`` is already a node, unless ``allow_duplicate``
        (the coinciding node then gets an unbounded top rank).
        """
        pair, R, rank, pts, slack = self._pair, self.R, self.rank, self.points, self._slack
        ordered, greach, far, thr = self._ordered, self.group_reach, self._far, self._thr
        out = []
        stack = [0]
        while stack:
            j = stack.pop()
            d = pair(x, pts[j])
            if d == 0.0:
                if not allow_duplicate:
                    return None
                t = _NO_TOP
            else:
                t = top_rank(d / R)
            Lj = rank[j]
            if t >= Lj:
                out.append((Lj, t, j))
            # a descendant of rank >= L only matters within R 2^-L of x
            gr = greach[j]
            for L, members in ordered[j]:
                if d > far[L] + thr[L]:
                    break
                if d - gr[L] <= thr[L] + slack:
                    stack.extend(members)
        return out

    def insert(self, x) -> InsertResult:
        p = tuple(as_point(self.space, x).tolist())
        if not self.points:
            self._append(p, 0, None)
            return InsertResult(0, 0, None)
        cov = self._covering_nodes(p)
        if cov is None:
            self.duplicates.append(p)
            return InsertResult(None, None, None, duplicate=True)
        cov.sort()
        L = 1
        for Lj, tj, _ in cov:
            if Lj > L:
                break
            if tj >= L:
                L = tj + 1
        parents = [j for Lj, tj, j in cov if Lj <= L - 1 <= tj]
        edge = not parents
        parent = min(parents) if parents else 0
        k = self._append(p, L, parent)
        if edge:
            self.root_edges.append(k)
        return InsertResult(k, L, parent, root_edge=edge)

    def _append(self, p, L, parent) -> int:
        k = len(self.points)
        self.points.append(p)
        self.rank.append(L)
        self.parent.append(parent)
        self.groups.append({})
        self.group_reach.append({})
        self._ordered.append([])
        self.reach.append(0.0)
        if parent is not None:
            g = self.groups[parent]
            if L not in g:
                g[L] = []
                bisect.insort(self._ordered[parent], (L, g[L]), key=lambda e: e[0])
            g[L].append(k)
            c, a = k, parent
            while a is not None:
                d = self._pair(p, self.points[a])
                Lc = self.rank[c]
                if d > self.group_reach[a].get(Lc, -1.0):
                    self.group_reach[a][Lc] = d
                if d > self.reach[a]:
                    self.reach[a] = d
                c, a = a, self.parent[a]
        return k

    @property
    def generations(self) -> list[dict[int, int]]:
        """Per node, child rank -> index of the first child with that rank."""
        return [{L: m[0] for L, m in g.items()} for g in self.groups]

    def children(self, k: int) -> list[int]:
        return sorted(c for m in self.groups[k].values() for c in m)

    def generation_count(self, k: int, m: Optional[int] = None) -> int:
        """``G_{k,m}``: distinct child ranks of node ``k`` among the first ``m`` nodes."""
        if m is None:
            return len(self.groups[k])
        return sum(1 for members in self.groups[k].values() if members[0] < m)

    # -------------------------------------------------------------- queries

    def nearest(self, x) -> tuple[float, int]:
        """Exact nearest node: ``(rho, index)`` with the lowest index on ties."""
        if not self.points:
            raise ValueError("empty tree")
        p = x if isinstance(x, tuple) else tuple(as_point(self.space, x).tolist())
        pair, pts, reach, slack = self._pair, self.points, self.reach, self._slack
        ordered, greach, far = self._ordered, self.group_reach, self._far
        best_d, best_i = math.inf, -1
        stack = [(pair(p, pts[0]), 0)]
        while stack:
            d, j = stack.pop()
            if d - reach[j] > best_d + slack:
                continue
            if d < best_d or (d == best_d and j < best_i):
                best_d, best_i = d, j
            cand = []
            gr = greach[j]
            for L, members in ordered[j]:
                if d - far[L] > best_d + slack:
                    break
                if d - gr[L] <= best_d + slack:
                    for c in members:
                        dc = pair(p, pts[c])
                        if dc - reach[c] <= best_d + slack:
                            cand.append((dc, c))
            if cand:
                cand.sort(reverse=True)
                stack.extend(cand)
        return best_d, best_i

    def neighbor(self, x) -> NeighborBall:
        """Cover-tree neighbor ball ``B(a, 2^-l)`` of a point not in the tree.

        ``l`` is fixed by ``2^-l-1 <= s(x, nodes) < 2^-l`` (clamped at 0) and
        ``a`` is the nearest node when its cone reaches level ``l``, otherwise
        the lowest-index node of rank at most ``l`` whose ``2^-l`` ball holds
        the nearest node.
        """
        p = tuple(as_point(self.space, x).tolist())
        rho, a = self.nearest(p)
        return self.neighbor_given(rho, a)

    def neighbor_given(self, rho: float, a: int) -> NeighborBall:
        """Neighbor ball of a query whose nearest node ``a`` at distance ``rho`` is already known."""
        if rho == 0.0:
            raise DuplicateError("query coincides with a tree node")
        level = max(0, top_rank(self.scaled(rho)))
        center = a
        if self.rank[a] > level:
            # lowest-index node j with L_j <= l whose 2^-l ball holds a_a
            cov = self._covering_nodes(self.points[a], allow_duplicate=True)
            center = min((j for Lj, t, j in cov if Lj <= level <= t), default=0)
        r = math.ldexp(1.0, -level)
        return NeighborBall(center, self.point(center), level, self.R * r, r)

    def check_double_cover(self, x, ball: NeighborBall) -> bool:
        """Both neighbor-ball conditions, evaluated exactly in scaled units."""
        p = tuple(as_point(self.space, x).tolist())
        s_near = self.scaled(self.nearest(p)[0])
        s_center = self.scaled(self._pair(p, self.points[ball.center]))
        r = ball.scaled_radius
        return s_center < 2 * r and r / 2 <= s_near < r and self.rank[ball.center] <= ball.level

    # ------------------------------------------------------------ dump/load

    def dump(self) -> str:
        lines = []
        for k, p in enumerate(self.points):
            par = "-" if self.parent[k] is None else str(self.parent[k])
            gens = ",".join(str(L) for L in self.groups[k]) or "-"
            lines.append("\t".join([str(k), ",".join(repr(v) for v in p), str(self.rank[k]), par, gens]))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def load(cls, space: MetricSpace, text: str) -> "CoverTree":
        tree = cls(space)
        ranks = []
        for line in text.splitlines():
            if not line.strip():
                continue
            k, coords, L, par, gens = line.split("\t")
            if int(k) != len(tree.points):
                raise ValueError(f"node {k} out of order")
            p = tuple(float(v) for v in coords.split(","))
            tree._append(p, int(L), None if par == "-" else int(par))
            expect = [] if gens == "-" else [int(v) for v in gens.split(",")]
            ranks.append(expect)
        for k, expect in enumerate(ranks):
            if list(tree.groups[k]) != expect:
                raise ValueError(f"generation ranks of node {k} disagree with its children")
        return tree


def top_rank_or_inf(s: float) -> float:
    return math.inf if s == 0.0 else top_rank(s)


# ------------------------------------------------------------------ tails


@dataclass(frozen=True)
class TailConfig:
    """Tail parameters; ``c`` and ``d`` certify ``nu(B(x, r)) <= c r^d`` in original units."""

    delta: float
    c: float
    d: int

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not (self.c > 0 and self.d > 0):
            raise ValueError("c and d must be positive")


def tail_offset(c: float, d: int, delta: float) -> int:
    """``ceil((1/d) lg(c / delta))``."""
    return math.ceil(math.log2(c / delta) / d)


def tail_rank_value(L: int, G: int, c: float, d: int, delta: float) -> int:
    return L + 1 + tail_offset(c, d, delta) + G


def _scaled_c(tree: CoverTree, cfg: TailConfig) -> float:
    # a ball of scaled radius s has original radius R s
    return cfg.c * tree.R**cfg.d


def tail_rank(tree: CoverTree, k: int, m: int, cfg: TailConfig) -> int:
    """Tail rank of node ``k`` once the tree holds ``m`` nodes."""
    if not 0 <= k < m <= len(tree):
        raise ValueError("node k must be among the first m nodes")
    return tail_rank_value(tree.rank[k], tree.generation_count(k, m), _scaled_c(tree, cfg), cfg.d, cfg.delta)


def tail_balls(tree: CoverTree, m: int, cfg: TailConfig) -> tuple[np.ndarray, np.ndarray]:
    """Centres and original-unit radii of the tail balls of the first ``m`` nodes."""
    centers = np.array(tree.points[:m], dtype=float).reshape(m, tree.space.dim)
    radii = np.array([tree.R * math.ldexp(1.0, -tail_rank(tree, k, m, cfg)) for k in range(m)])
    return centers, radii


def _interval_union_mass(measure: ReferenceMeasure, lo: np.ndarray, hi: np.ndarray) -> float:
    a, b = measure.space.lo[0], measure.space.hi[0]
    lo, hi = np.maximum(lo, a), np.minimum(hi, b)
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    if measure.kind == "lebesgue":
        run = np.maximum.accumulate(hi)
        prev = np.concatenate([[-math.inf], run[:-1]])
        return float(np.maximum(0.0, hi - np.maximum(lo, prev)).sum()) / (b - a)
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


def tail_set_mass(
    tree: CoverTree, m: int, cfg: TailConfig, measure: ReferenceMeasure, n_samples: int = 1_000_000, seed=0
) -> MassEstimate:
    """Mass of the union of tail balls of the first ``m`` nodes.

    Exact interval arithmetic in one dimension, Monte Carlo otherwise.
    """
    if m == 0:
        return MassEstimate(0.0, 0.0, 0, True)
    C, r = tail_balls(tree, m, cfg)
    if tree.space.dim == 1:
        return MassEstimate(_interval_union_mass(measure, C[:, 0] - r, C[:, 0] + r), 0.0, 0, True)
    return TailMassTracker(tree, cfg, measure, n_samples, seed).mass_after(m)


class TailMassTracker:
    """Monte Carlo tail mass for every prefix, updated incrementally.

    A fixed sample is indexed once; adding node ``m`` adds its ball and may
    halve its parent's ball (one more generation), nothing else changes.
    """

    def __init__(self, tree: CoverTree, cfg: TailConfig, measure: ReferenceMeasure, n_samples: int = 1_000_000, seed=0):
        self.tree, self.cfg, self.measure = tree, cfg, measure
        rng = np.random.default_rng(seed)
        self.sample = measure.sample(rng, n_samples)
        self.kd = cKDTree(self.sample)
        self.p = 2 if tree.space.kind == "euclidean" else np.inf
        self.counts = np.zeros(n_samples, dtype=np.int32)
        self.covered = 0
        self.m = 0
        self.radius: list[float] = []

    def _ball(self, k: int, radius: float) -> np.ndarray:
        return np.asarray(self.kd.query_ball_point(self.tree.points[k], np.nextafter(radius, 0), p=self.p), dtype=int)

    def _add(self, idx):
        if idx.size:
            before = self.counts[idx] == 0
            self.counts[idx] += 1
            self.covered += int(before.sum())

    def _remove(self, idx):
        if idx.size:
            self.counts[idx] -= 1
            self.covered -= int((self.counts[idx] == 0).sum())

    def advance(self) -> MassEstimate:
        tree, m = self.tree, self.m
        if m >= len(tree):
            raise ValueError("no more nodes")
        par = tree.parent[m]
        self.m = m + 1
        self.radius.append(tree.R * math.ldexp(1.0, -tail_rank(tree, m, self.m, self.cfg)))
        self._add(self._ball(m, self.radius[m]))
        if par is not None:
            new = tree.R * math.ldexp(1.0, -tail_rank(tree, par, self.m, self.cfg))
            if new != self.radius[par]:
                old_idx = self._ball(par, self.radius[par])
                self._remove(old_idx)
                self._add(self._ball(par, new))
                self.radius[par] = new
        return self.estimate()

    def estimate(self) -> MassEstimate:
        n = self.counts.size
        frac = self.covered / n
        total = self.measure.total
        return MassEstimate(total * frac, total * math.sqrt(frac * (1 - frac) / n), n, False)

    def mass_after(self, m: int) -> MassEstimate:
        while self.m < m:
            self.advance()
        return self.estimate()


def tail_masses_1d(
    tree: CoverTree, cfg: TailConfig, measure: ReferenceMeasure, prefixes: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Exact tail mass after each prefix ``m`` of a one-dimensional tree.

    ``prefixes`` defaults to every ``m = 1..len(tree)``; the result follows
    the prefixes in increasing order.
    """
    want = set(range(1, len(tree) + 1) if prefixes is None else prefixes)
    out = []
    pts = np.array([p[0] for p in tree.points])
    c = _scaled_c(tree, cfg)
    off = tail_offset(c, cfg.d, cfg.delta)
    radii = []
    G = [0] * len(tree)
    for m in range(1, len(tree) + 1):
        k = m - 1
        par = tree.parent[k]
        radii.append(tree.R * math.ldexp(1.0, -(tree.rank[k] + 1 + off)))
        if par is not None and tree.groups[par][tree.rank[k]][0] == k:
            G[par] += 1
            radii[par] = tree.R * math.ldexp(1.0, -(tree.rank[par] + 1 + off + G[par]))
        if m in want:
            r = np.array(radii)
            out.append(_interval_union_mass(measure, pts[:m] - r, pts[:m] + r))
    return np.array(out)


# ------------------------------------------------------- separated events


@dataclass
class ChargedSet:
    """Instances charged to one region ``U`` with separation ``sep``.

    ``region`` and ``sep`` are in units scaled by ``scale`` (so the cover-tree
    keys compare dyadic numbers exactly).
    """

    center: np.ndarray
    region: float
    sep: float
    points: list = field(default_factory=list)
    rounds: list = field(default_factory=list)


class SeparatedEventLog:
    """Rounds at which an instance landed in ``U`` and was ``sep``-separated from all past instances."""

    def __init__(self, space: MetricSpace, scale: float = 1.0):
        self.space = space
        self.scale = scale
        self.sets: dict = {}

    def charge(self, key, center, region: float, sep: float, x, n: int) -> None:
        cs = self.sets.get(key)
        if cs is None:
            cs = self.sets[key] = ChargedSet(as_point(self.space, center), region, sep)
        cs.points.append(as_point(self.space, x))
        cs.rounds.append(n)

    def __len__(self) -> int:
        return sum(len(cs.points) for cs in self.sets.values())


def packing_upper_bound(space: MetricSpace, center, radius: float, sep: float) -> int:
    """Upper bound on the ``sep``-packing number of ``B(center, radius)`` within the domain.

    Pigeonhole over half-open cells whose diameter is at most ``sep``.
    """
    c = as_point(space, center)
    lo = np.maximum(c - radius, space.lo_array)
    hi = np.minimum(c + radius, space.hi_array)
    side = sep / math.sqrt(space.dim) if space.kind == "euclidean" else sep
    return int(np.prod(np.floor((hi - lo) / side) + 1))


@dataclass
class PackingAudit:
    passed: bool
    n_keys: int
    n_charged: int
    violations: list
    exact_checked: int


def packing_bound_audit(log: SeparatedEventLog, space: MetricSpace) -> PackingAudit:
    """Check every charged set is a packing inside its region, and its size against packing numbers."""
    pair = pair_function(space)
    S = log.scale
    violations = []
    exact = 0
    for key, cs in log.sets.items():
        pts = [tuple(p.tolist()) for p in cs.points]
        c = tuple(cs.center.tolist())
        for p, n in zip(pts, cs.rounds):
            if not pair(p, c) / S < cs.region:
                violations.append({"key": repr(key), "kind": "outside-region", "round": n, "point": list(p)})
        for i in range(len(pts)):
            for j in range(i):
                if not pair(pts[i], pts[j]) / S >= cs.sep:
                    violations.append({
                        "key": repr(key), "kind": "not-separated",
                        "rounds": [cs.rounds[j], cs.rounds[i]], "points": [list(pts[j]), list(pts[i])],
                    })
        count = len(pts)
        bound = packing_upper_bound(space, cs.center, cs.region * S, cs.sep * S)
        if count > bound:
            violations.append({"key": repr(key), "kind": "count", "count": count, "bound": bound})
        if count <= 24:
            exact += 1
            P = packing_number(space, np.array(pts), cs.sep * S)
            if P.value < count:
                violations.append({"key": repr(key), "kind": "packing-number", "count": count, "packing": P.value})
    return PackingAudit(not violations, len(log.sets), len(log), violations, exact)


# ------------------------------------------------------- decomposition


@dataclass
class DecompositionReport:
    applicable: bool
    passed: bool
    ball: Optional[NeighborBall] = None
    separation: Optional[float] = None
    reason: str = ""


def decomposition_check(tree: CoverTree, x, history, nn_in_tree: Optional[bool] = None) -> DecompositionReport:
    """If the nearest past instance is a tree node, ``x`` is r/2-separated from history and lies in 2B.

    ``history`` holds all past instances; ``B(a, r)`` is the cover-tree neighbor of ``x``.
    """
    space = tree.space
    H = as_points(space, history)
    p = tuple(as_point(space, x).tolist())
    if H.shape[0] == 0 or len(tree) == 0:
        return DecompositionReport(False, True, reason="empty history")
    pair = pair_function(space)
    rho_hist = min(pair(p, tuple(h)) for h in H.tolist())
    rho_tree, _ = tree.nearest(p)
    if nn_in_tree is None:
        nn_in_tree = rho_tree == rho_hist
    if not nn_in_tree or rho_tree == 0.0:
        return DecompositionReport(False, True, reason="nearest neighbor is not a tree node")
    ball = tree.neighbor(p)
    r = ball.scaled_radius
    sep = tree.scaled(rho_hist)
    inside = tree.scaled(pair(p, tree.points[ball.center])) < 2 * r
    ok = inside and sep >= r / 2
    return DecompositionReport(True, ok, ball, sep, "" if ok else "separation or containment violated")
