"""Experiment runner and audit suite.

A trial drives the 1-NN learner with the configured process for ``horizon``
rounds and records the indicator ``I_n = 1{X_n in A}``.  Everything the
audits need is recomputed from the trace by :func:`replay`: the cover tree
over indicated instances, the separated-event log and the per-round
decomposition checks.  Traces loaded back from CSV therefore audit exactly
like fresh ones.

Each audit declares its preconditions; when they do not hold the audit is
reported as skipped, never failed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .config import ExperimentConfig, stream_seed
from .covertree import (
    CoverTree,
    SeparatedEventLog,
    TailConfig,
    TailMassTracker,
    packing_bound_audit,
    tail_masses_1d,
    tail_offset,
)
from .geometry import (
    box_dimension_estimate,
    fit_cover_constants,
    minkowski_content_estimate,
    rate_curve_bound,
)
from .labels import ml_covering_number_estimate
from .learner import NearestNeighborLearner, RoundRecord
from .measure import MC_SLACK
from .metric import pair_function
from .processes import indicator_stats


def checkpoints(N: int) -> list[int]:
    """Powers of ten up to ``N``, then ``N`` itself."""
    out, c = [], 10
    while c <= N:
        out.append(c)
        c *= 10
    if not out or out[-1] != N:
        out.append(N)
    return out


@dataclass
class Trial:
    index: int
    records: list
    flags: np.ndarray
    keys: Optional[list] = None   # separated-event key per round; None when not logged
    replayed: Optional["Replay"] = field(default=None, repr=False, compare=False)

    @property
    def instances(self) -> np.ndarray:
        return np.array([r.instance for r in self.records])

    def cumulative_mistakes(self) -> np.ndarray:
        return np.cumsum([r.mistake for r in self.records])


def run_trial(cfg: ExperimentConfig, trial: int) -> Trial:
    space, eta = cfg.space(), cfg.eta()
    gen = cfg.generator(trial)
    learner = NearestNeighborLearner(space, eta, cfg["backend"])
    box = cfg.indicator_box()
    N = cfg["horizon"]
    hist = np.empty((N, space.dim))
    flags = np.ones(N, dtype=np.uint8)
    trace: list = []
    for n in range(N):
        x = gen.next_instance(hist[:n], trace)
        trace.append(learner.predict_and_update(x))
        hist[n] = x
    if box is not None:
        lo, hi = box
        flags = np.all((hist >= lo) & (hist < hi), axis=1).astype(np.uint8)
    t = Trial(trial, trace, flags)
    t.replayed = replay(cfg, t)
    t.keys = t.replayed.keys
    return t


# ------------------------------------------------------------- replay


@dataclass
class Replay:
    tree: CoverTree
    log: SeparatedEventLog
    keys: list
    nn_indicated: int               # rounds whose nearest neighbor is an indicated instance
    duplicates: int                 # of those, rounds repeating a past instance
    defects: list = field(default_factory=list)


def replay(cfg: ExperimentConfig, trial: Trial) -> Replay:
    """Rebuild the indicated-instance cover tree and the separated-event log.

    Whenever the nearest past instance is indicated and distinct from ``x``,
    ``x`` is charged to the key ``(a, l)`` of its cover-tree neighbor ball
    ``B(a, r)``, with region ``2B`` and separation ``r/2``.  The round is a
    defect if the decomposition conditions fail.
    """
    space = cfg.space()
    tree = CoverTree(space)
    log = SeparatedEventLog(space, scale=tree.R)
    pair = pair_function(space)
    flags = trial.flags
    keys = [""] * len(trial.records)
    hits = dups = 0
    defects = []
    node_of: dict[int, int] = {}   # memory index -> tree node (first copy for repeats)
    for i, rec in enumerate(trial.records):
        p = tuple(rec.instance.tolist())
        if rec.nn_index is not None and flags[rec.nn_index]:
            hits += 1
            a = node_of.get(rec.nn_index)
            if rec.nn_distance == 0.0:
                dups += 1
            elif a is None or pair(p, tree.points[a]) != rec.nn_distance:
                defects.append({"round": rec.n, "instance": list(p), "kind": "nearest-neighbor-mismatch"})
            else:
                # the learner's nearest neighbor is the nearest tree node
                ball = tree.neighbor_given(rec.nn_distance, a)
                r = ball.scaled_radius
                sep = tree.scaled(rec.nn_distance)
                inside = tree.scaled(pair(p, tree.points[ball.center])) < 2 * r
                if not (inside and sep >= r / 2):
                    defects.append({"round": rec.n, "instance": list(p), "kind": "decomposition",
                                    "center": ball.center, "level": ball.level, "separation": sep,
                                    "inside": inside})
                log.charge((ball.center, ball.level), ball.point, 2 * r, r / 2, rec.instance, rec.n)
                keys[i] = f"{ball.center}:{ball.level}"
        if flags[i]:
            res = tree.insert(p)
            node_of[i] = res.index if not res.duplicate else tree.points.index(p)
    return Replay(tree, log, keys, hits, dups, defects)


# ------------------------------------------------------------- reports


@dataclass
class AuditReport:
    audit: str
    passed: bool
    observed: Optional[float]
    bound: Optional[float]
    witnesses: list = field(default_factory=list)
    trial: Optional[int] = None
    status: str = ""
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.passed else "fail"

    @property
    def slack(self) -> Optional[float]:
        if self.observed is None or self.bound is None:
            return None
        return self.bound - self.observed

    @classmethod
    def skipped(cls, audit: str, reason: str, trial: Optional[int] = None) -> "AuditReport":
        return cls(audit, True, None, None, [], trial, "skipped", {"reason": reason})

    def to_dict(self) -> dict:
        return {
            "audit": self.audit,
            "pass": self.passed,
            "observed": _finite(self.observed),
            "bound": _finite(self.bound),
            "slack": _finite(self.slack),
            "witnesses": self.witnesses,
            "trial": self.trial,
            "status": self.status,
            "detail": self.detail,
        }


def _finite(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


# ------------------------------------------------------------- audits


class AuditContext:
    """Per-configuration objects and caches shared by all trials."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.space = cfg.space()
        self.measure = cfg.measure()
        self.eta = cfg.eta()
        self.gen = cfg.generator(0)
        self.box = cfg.indicator_box()
        self._ml_cover = None
        self._rate_fit = None

    def rate(self) -> Optional[Callable[[float], float]]:
        return self.gen.rate if self.gen.rate(0.5) is not None else None

    def indicator_mass(self) -> float:
        if self.box is None:
            return self.measure.total
        return self.measure.box_mass(*self.box)

    def ml_cover(self):
        if self._ml_cover is None:
            cfg = self.cfg
            r = cfg["ml.r"] if cfg["ml.r"] is not None else self.space.diameter / 100
            self._ml_cover = ml_covering_number_estimate(
                self.eta, self.measure, r, n_samples=cfg["ml.n_samples"],
                seed=stream_seed(cfg["seed"], 0, 2), safety=cfg["ml.safety"],
            )
        return self._ml_cover

    def doubling(self) -> Optional[tuple[float, int]]:
        """``(c, d)`` scaled to a unit-diameter space, or None without a certificate."""
        cfg = self.cfg
        if self.measure.kind != "lebesgue" and cfg["tail.c"] is None:
            return None
        c, d = cfg.tail_cd()
        return c * self.space.diameter**d, d


def audit_mutually_labeling(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Every certified mutually-labeling ball holds at most one mistaken instance.

    Balls are ``B(x, safety * m(x) / 3)`` around every instance with positive
    certified margin, plus the balls of a greedy cover of ``V_r``.
    """
    name = "mutually-labeling"
    X = trial.instances
    mistakes = X[[r.mistake for r in trial.records]]
    safety = ctx.cfg["ml.safety"]
    m = ctx.eta.margin_lower(X)
    pos = np.isfinite(m) & (m > 0)
    centers = [X[pos]]
    radii = [safety * m[pos] / 3]
    inf = ~np.isfinite(m)
    if inf.any():   # constant labels: the whole domain is one ball
        centers.append(X[inf])
        radii.append(np.full(int(inf.sum()), 2 * ctx.space.diameter))
    cover = ctx.ml_cover()
    if cover.balls:
        centers.append(np.array([b.center for b in cover.balls]))
        radii.append(np.array([b.radius for b in cover.balls]))
    C = np.vstack(centers) if centers else np.zeros((0, ctx.space.dim))
    R = np.concatenate(radii) if radii else np.zeros(0)
    worst, witnesses = 0, []
    if mistakes.shape[0] and C.shape[0]:
        kd = cKDTree(mistakes)
        p = 2 if ctx.space.kind == "euclidean" else np.inf
        # generous radii find candidates; membership is then decided exactly
        counts = kd.query_ball_point(C, R * (1 + 1e-9) + 1e-300, p=p, return_length=True)
        pair = pair_function(ctx.space)
        mistake_rounds = [r.n for r in trial.records if r.mistake]
        for i in np.nonzero(counts >= 1)[0]:
            c = tuple(C[i].tolist())
            idx = kd.query_ball_point(C[i], R[i] * (1 + 1e-9) + 1e-300, p=p)
            inside = [j for j in idx if pair(c, tuple(mistakes[j].tolist())) < R[i]]
            worst = max(worst, len(inside))
            if len(inside) > 1 and len(witnesses) < 20:
                witnesses.append({"center": list(c), "radius": float(R[i]),
                                  "rounds": sorted(mistake_rounds[j] for j in inside)})
    return AuditReport(name, worst <= 1, float(worst), 1.0, witnesses, trial.index,
                       detail={"balls": int(C.shape[0]), "cover_balls": cover.count,
                               "mistakes": int(mistakes.shape[0])})


def audit_hit_packing(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Every charged set is an ``r/2``-packing of its region ``2B`` and within packing bounds."""
    name = "hit-packing"
    if trial.keys is None:
        return AuditReport.skipped(name, "trace carries no separated-event log", trial.index)
    logged = [k for k in trial.keys if k]
    if logged != [k for k in rp.keys if k]:
        return AuditReport(name, False, float(len(logged)), float(len([k for k in rp.keys if k])),
                           [{"kind": "event-log-mismatch"}], trial.index)
    res = packing_bound_audit(rp.log, ctx.space)
    return AuditReport(name, res.passed, float(len(res.violations)), 0.0, res.violations[:20], trial.index,
                       detail={"keys": res.n_keys, "charged": res.n_charged, "exact_checked": res.exact_checked})


def audit_delta_tail(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Tail mass of the indicated-instance cover tree stays below ``delta`` for every prefix."""
    name = "delta-tail"
    cfg = ctx.cfg
    if ctx.doubling() is None:
        return AuditReport.skipped(name, "reference measure has no doubling certificate (set tail.c)", trial.index)
    tree = rp.tree
    m = len(tree)
    if m == 0:
        return AuditReport.skipped(name, "no indicated instances", trial.index)
    c, d = cfg.tail_cd()
    tcfg = TailConfig(cfg["tail.delta"], c, d)
    delta = tcfg.delta
    cap = cfg["tail.max_prefixes"]
    if m <= cap:
        prefixes = list(range(1, m + 1))
    else:
        prefixes = sorted(set(list(range(1, cap + 1)) + np.unique(np.geomspace(cap, m, 200).astype(int)).tolist() + [m]))
    if ctx.space.dim == 1:
        masses = tail_masses_1d(tree, tcfg, ctx.measure, prefixes)
        i = int(np.argmax(masses))
        worst = float(masses[i])
        ok = bool(np.all(masses < delta))
        wit = [{"prefix": prefixes[j], "mass": float(masses[j])} for j in np.nonzero(masses >= delta)[0][:20]]
        return AuditReport(name, ok, worst, delta, wit, trial.index,
                           detail={"nodes": m, "prefixes": len(prefixes), "exact": True, "worst_prefix": prefixes[i]})
    tracker = TailMassTracker(tree, tcfg, ctx.measure, cfg["mc.n_samples"], stream_seed(cfg["seed"], trial.index, 1))
    worst, worst_se, worst_m, wit = -1.0, 0.0, 0, []
    want = set(prefixes)
    for k in range(1, m + 1):
        est = tracker.advance()
        if k not in want:
            continue
        if est.value > worst:
            worst, worst_se, worst_m = est.value, est.stderr, k
        if est.value >= delta + MC_SLACK * est.stderr and len(wit) < 20:
            wit.append({"prefix": k, "mass": est.value, "stderr": est.stderr})
    return AuditReport(name, not wit, worst, delta, wit, trial.index,
                       detail={"nodes": m, "prefixes": len(prefixes), "exact": False,
                               "stderr": worst_se, "worst_prefix": worst_m, "mc_slack": MC_SLACK})


def audit_decomposition(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Rounds with an indicated nearest neighbor are separated events of their neighbor ball."""
    name = "decomposition"
    return AuditReport(name, not rp.defects, float(len(rp.defects)), 0.0, rp.defects[:20], trial.index,
                       detail={"nn_indicated": rp.nn_indicated, "duplicates": rp.duplicates})


def influence_constants(c: float, d: int) -> tuple[float, float]:
    """``c1 = 4^d (3 + lg(c)/d)`` and ``c2 = 4^d / d``."""
    return 4.0**d * (3 + math.log2(c) / d), 4.0**d / d


def audit_influence(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Frequency of indicated nearest neighbors against the indicator rate."""
    name = "influence"
    eps = ctx.rate()
    if eps is None:
        return AuditReport.skipped(name, f"process {ctx.gen.kind} has no domination rate", trial.index)
    cd = ctx.doubling()
    if cd is None:
        return AuditReport.skipped(name, "reference measure has no doubling certificate (set tail.c)", trial.index)
    c1, c2 = influence_constants(*cd)
    N = len(trial.records)
    delta = ctx.cfg["tail.delta"]
    gamma = indicator_stats(trial.flags).rate
    freq = rp.nn_indicated / N
    bound = gamma * (c1 + c2 * math.log2(1 / delta)) + eps(delta) + 5 / math.sqrt(N)
    # the same bound with the tail offset rounded up, as the cover tree uses it; never smaller
    c, d = cd
    ceil_bound = gamma * 4.0**d * (3 + tail_offset(c, d, delta)) + eps(delta) + 5 / math.sqrt(N)
    return AuditReport(name, freq <= bound, freq, bound, [], trial.index,
                       detail={"gamma": gamma, "c1": c1, "c2": c2, "delta": delta, "eps": eps(delta),
                               "ceil_bound": ceil_bound})


def audit_nn_ergodicity(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Frequency of nearest neighbors in a small set, against a bound in the set's mass.

    This is evidence, not a proof: the bound holds asymptotically, and is
    checked here at a finite horizon.
    """
    name = "nn-ergodicity"
    eps = ctx.rate()
    if eps is None:
        return AuditReport.skipped(name, f"process {ctx.gen.kind} has no domination rate", trial.index)
    if ctx.box is None:
        return AuditReport.skipped(name, "no indicator set configured", trial.index)
    cd = ctx.doubling()
    if cd is None:
        return AuditReport.skipped(name, "reference measure has no doubling certificate (set tail.c)", trial.index)
    c1, c2 = influence_constants(*cd)
    mass = ctx.indicator_mass()
    e0 = eps(mass)
    bound, best = min(((c1 + c2 * math.log2(1 / dl)) * e0 + eps(dl), dl)
                      for dl in (math.ldexp(1.0, -j) for j in range(1, 60)))
    freq = rp.nn_indicated / len(trial.records)
    return AuditReport(name, freq <= bound, freq, bound, [], trial.index,
                       detail={"mass": mass, "delta": best, "evidence_only": True})


@dataclass
class RateFit:
    b: float
    m: float
    C: float
    r0: float
    sigma: float
    radii: list
    counts: list


def fit_rate_constants(ctx: AuditContext) -> RateFit:
    """Boundary dimension and content, and cover constants from mutually-labeling covers."""
    cfg, space, eta = ctx.cfg, ctx.space, ctx.eta
    seed = stream_seed(cfg["seed"], 0, 3)
    B = eta.boundary_sample(20000, seed=seed)
    if B.shape[0] == 0:
        b, mcont = 0.0, 0.0
    else:
        if space.dim == 1:
            b = 0.0
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                b = max(0.0, box_dimension_estimate(B, kind="euclidean" if space.kind == "euclidean" else "sup").slope)
        cont = minkowski_content_estimate(B, ctx.measure, n_samples=cfg["mc.n_samples"], seed=seed)
        mcont = cont.content if math.isfinite(cont.content) else cont.masses.max() / cont.radii.min()
    sched = cfg["rate.schedule"] or [math.ldexp(1.0, -j) for j in range(2, 8)]
    radii = [s * space.diameter for s in sched]
    counts = [
        max(1, ml_covering_number_estimate(eta, ctx.measure, r, n_samples=cfg["ml.n_samples"],
                                           seed=stream_seed(cfg["seed"], 0, 4 + i), safety=cfg["ml.safety"]).count)
        for i, r in enumerate(radii)
    ]
    fit = fit_cover_constants(radii, counts, b, cfg["rate.c1"])
    kind = ctx.gen.kind
    sigma = ctx.cfg["process.sigma"] if kind in ("smoothed", "uniformly-dominated") else ctx.measure.total
    return RateFit(b, float(mcont), fit.C, fit.r0, min(sigma, ctx.measure.total), radii, counts)


def audit_rate_bound(ctx: AuditContext, trial: Trial, rp: Replay) -> AuditReport:
    """Cumulative mistakes at every checkpoint against the rate-curve bound."""
    name = "rate-bound"
    eps = ctx.rate()
    if eps is None:
        return AuditReport.skipped(name, f"process {ctx.gen.kind} has no domination rate", trial.index)
    if ctx._rate_fit is None:
        ctx._rate_fit = fit_rate_constants(ctx)
    f = ctx._rate_fit
    cfg = ctx.cfg
    cum = trial.cumulative_mistakes()
    worst, wit, rows = None, [], []
    for N in checkpoints(len(cum)):
        rb = rate_curve_bound(N, f.sigma, f.m, f.b, cfg["rate.c1"], cfg["rate.c2"], f.C, f.r0,
                              p=cfg["azuma.p"], eps=eps)
        obs = int(cum[N - 1])
        rows.append({"checkpoint": N, "mistakes": obs, "bound": rb.value})
        if worst is None or rb.value - obs < worst[1] - worst[0]:
            worst = (obs, rb.value)
        if obs > rb.value:
            wit.append(rows[-1])
    return AuditReport(name, not wit, float(worst[0]), float(worst[1]), wit, trial.index,
                       detail={"b": f.b, "m": f.m, "C": f.C, "r0": f.r0, "sigma": f.sigma,
                               "checkpoints": rows})


AUDIT_FUNCTIONS = {
    "mutually-labeling": audit_mutually_labeling,
    "hit-packing": audit_hit_packing,
    "delta-tail": audit_delta_tail,
    "decomposition": audit_decomposition,
    "influence": audit_influence,
    "nn-ergodicity": audit_nn_ergodicity,
    "rate-bound": audit_rate_bound,
}


def audit_suite(cfg: ExperimentConfig, trials: list, audits: Optional[list] = None) -> list[AuditReport]:
    """Run the selected audits on every trial, in a fixed order."""
    names = cfg.audits() if audits is None else audits
    if not names:
        return []
    ctx = AuditContext(cfg)
    reports = []
    for t in trials:
        rp = t.replayed if t.replayed is not None else replay(cfg, t)
        for name in names:
            reports.append(AUDIT_FUNCTIONS[name](ctx, t, rp))
    return reports


# ------------------------------------------------------------- experiments


@dataclass
class ExperimentResult:
    trials: list
    reports: list
    curve: list   # rows (trial or "median", checkpoint, cum_mistakes, rate)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def rate_curve(trials: list) -> list:
    rows = []
    if not trials:
        return rows
    N = min(len(t.records) for t in trials)
    cps = checkpoints(N)
    cums = [t.cumulative_mistakes() for t in trials]
    for t, cum in zip(trials, cums):
        for c in cps:
            rows.append((str(t.index), c, int(cum[c - 1]), float(cum[c - 1]) / c))
    for c in cps:
        vals = [float(cum[c - 1]) for cum in cums]
        med = float(np.median(vals))
        rows.append(("median", c, med, med / c))
    return rows


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    trials = [run_trial(cfg, t) for t in range(cfg["trials"])]
    reports = audit_suite(cfg, trials)
    return ExperimentResult(trials, reports, rate_curve(trials))


def mistake_rates(trials: list, N: Optional[int] = None) -> list[float]:
    return [float(sum(r.mistake for r in t.records[:N])) / (N or len(t.records)) for t in trials]


__all__ = [
    "AUDIT_FUNCTIONS", "AuditContext", "AuditReport", "ExperimentResult", "Replay", "RoundRecord", "Trial",
    "audit_suite", "checkpoints", "fit_rate_constants", "influence_constants", "mistake_rates",
    "rate_curve", "replay", "run_experiment", "run_trial",
]
