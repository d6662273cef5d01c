"""Acceptance criteria 1-12, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line (shown even when
output is captured) and then asserts the same condition.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from onlinenn.cli import main
from onlinenn.config import ExperimentConfig
from onlinenn.covertree import CoverTree, TailConfig, TailMassTracker, packing_upper_bound, tail_masses_1d
from onlinenn.geometry import box_dimension_estimate, minkowski_content_estimate
from onlinenn.harness import audit_suite, mistake_rates, replay, run_experiment, run_trial
from onlinenn.labels import Threshold
from onlinenn.learner import backend_equivalence_check
from onlinenn.measure import ReferenceMeasure
from onlinenn.metric import MetricSpace
from onlinenn.processes import WorstCaseThreshold, make_generator

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.slow

SMOOTHED_THRESHOLD = """
version = 1
space.lo = -1
space.hi = 1
label.t = 0
process.class = smoothed
process.sigma = 0.1
process.mode = adaptive-to-learner
horizon = 10000
"""

INFLUENCE = """
version = 1
space.lo = 0
space.hi = 1
label.t = 0.5
process.class = smoothed
process.sigma = 0.1
process.mode = adaptive-to-learner
indicator.lo = 0.49
indicator.hi = 0.51
tail.delta = 0.02
horizon = 100000
trials = 10
audits = ["influence"]
"""


@pytest.fixture
def verdict(capsys):
    def say(n, ok, msg):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {msg}")
        return ok
    return say


def cfg_of(text, **over):
    return ExperimentConfig.from_text(text).replace(**over)


def test_criterion_01_worst_case_threshold(verdict):
    cfg = ExperimentConfig.from_file(CONFIGS / "worst_case_threshold.cfg").replace(audits=[])
    t0 = time.perf_counter()
    trial = run_trial(cfg, 0)
    dt = time.perf_counter() - t0
    flags = [r.mistake for r in trial.records]
    rate, rest = np.mean(flags), np.mean(flags[1:])
    ok = len(flags) == 100 and rate == 1.0 and rest >= 0.99 and dt < 1.0
    assert verdict(1, ok, f"rate={rate} rate_after_round_1={rest} runtime={dt:.3f}s")


def test_criterion_02_general_adversary_halfspace(verdict):
    cfg = ExperimentConfig.from_file(CONFIGS / "halfspace_general.cfg").replace(audits=[])
    N = cfg["horizon"]
    t0 = time.perf_counter()
    trial = run_trial(cfg, 0)
    dt = time.perf_counter() - t0
    rate = mistake_rates([trial], N)[0]
    ok = N == 1000 and rate >= 0.5 - 2 / N and dt < 5.0
    assert verdict(2, ok, f"N={N} rate={rate:.4f} (need >= {0.5 - 2 / N}) runtime={dt:.3f}s")


def test_criterion_03_mutually_labeling_audit(verdict):
    worst, failed = 0.0, []
    for kind in ("iid", "smoothed"):
        cfg = cfg_of(SMOOTHED_THRESHOLD, **{"process.class": kind, "trials": 50, "seed": 3,
                                            "audits": ["mutually-labeling"]})
        trials = [run_trial(cfg, t) for t in range(50)]
        for rep in audit_suite(cfg, trials):
            worst = max(worst, rep.observed)
            if not rep.passed:
                failed.append((kind, rep.trial))
    ok = not failed and worst <= 1
    assert verdict(3, ok, f"100 runs (50 iid, 50 smoothed), N=10^4, max mistakes per ball={worst:g}, failing={failed}")


def test_criterion_04_hit_packing(verdict):
    charged, exact, bad = 0, 0, []
    setups = [
        (SMOOTHED_THRESHOLD, {"indicator.lo": -0.05, "indicator.hi": 0.05}),
        (SMOOTHED_THRESHOLD, {"process.class": "iid", "indicator.lo": -0.2, "indicator.hi": 0.2}),
        ((CONFIGS / "smoothed_square.cfg").read_text(), {}),
    ]
    for text, over in setups:
        cfg = cfg_of(text, horizon=5000, trials=3, audits=["hit-packing"], **over)
        for t in range(3):
            trial = run_trial(cfg, t)
            rp = replay(cfg, trial)
            for key, cs in rp.log.sets.items():
                n = len(cs.points)
                charged += n
                if n <= 24:
                    exact += 1
                    cap = packing_upper_bound(rp.log.space, cs.center, cs.region * rp.log.scale, cs.sep * rp.log.scale)
                    if n > cap:
                        bad.append((key, n, cap))
            (rep,) = audit_suite(cfg, [trial])
            if not rep.passed:
                bad.append(rep.to_dict())
    ok = not bad and charged > 0
    assert verdict(4, ok, f"charged={charged} exact_checked_sets={exact} violations={len(bad)}")


def test_criterion_05_delta_tail(verdict):
    rng = np.random.default_rng(5)
    unit = MetricSpace.interval(0.0, 1.0)
    nu1 = ReferenceMeasure(unit)
    worst1 = {}
    ok = True
    seqs = [rng.random((500, 1)) ** (1 + (i % 4)) for i in range(100)]  # uniform and clustered
    for delta in (0.25, 0.1, 0.01):
        cfg = TailConfig(delta, 2.0, 1)
        w = 0.0
        for X in seqs:
            tree = CoverTree(unit)
            for x in X:
                tree.insert(x)
            masses = tail_masses_1d(tree, cfg, nu1)
            w = max(w, float(masses.max()))
            ok &= bool(np.all(masses < delta))
        worst1[delta] = w
    sq = MetricSpace.cube(2, "sup")
    nu2 = ReferenceMeasure(sq)
    worst2 = {}
    for delta in (0.25, 0.1, 0.01):
        cfg = TailConfig(delta, 4.0, 2)
        w = 0.0
        for s in range(20):
            X = rng.random((500, 2)) ** (1 + (s % 3))
            tree = CoverTree(sq)
            for x in X:
                tree.insert(x)
            tracker = TailMassTracker(tree, cfg, nu2, n_samples=1_000_000, seed=s)
            for _ in range(len(tree)):
                est = tracker.advance()
                w = max(w, est.value)
                ok &= est.value < delta + 3 * est.stderr
        worst2[delta] = w
    msg = " ".join(f"d={d}: line={worst1[d]:.4g} square={worst2[d]:.4g}" for d in worst1)
    assert verdict(5, ok, msg)


def test_criterion_06_double_cover(verdict):
    rng = np.random.default_rng(6)
    spaces = [MetricSpace.interval(0.0, 1.0), MetricSpace.cube(2, "sup"), MetricSpace.cube(2, "euclidean")]
    queries, skipped, bad = 0, 0, 0
    per = [33_334, 33_333, 33_333]
    for space, n_q in zip(spaces, per):
        tree = CoverTree(space)
        for x in rng.random((2000, space.dim)) ** 2:
            tree.insert(x)
        for x in rng.random((n_q, space.dim)):
            queries += 1
            if tree.nearest(x)[0] == 0.0:
                skipped += 1
                continue
            bad += not tree.check_double_cover(x, tree.neighbor(x))
    ok = queries == 100_000 and bad == 0
    assert verdict(6, ok, f"queries={queries} failures={bad} exact-hits={skipped}")


def test_criterion_07_backend_equivalence(verdict):
    rng = np.random.default_rng(7)
    line = MetricSpace.interval(-1.0, 1.0)
    sq, euc = MetricSpace.cube(2, "sup"), MetricSpace.cube(2, "euclidean")
    wc = np.array([[WorstCaseThreshold.value(k)] for k in range(1, 2001)])
    nu = ReferenceMeasure(sq)
    gen = make_generator("smoothed", sq, nu, None, seed=7, sigma=0.05)
    sm = np.array([gen.next_instance(np.zeros((0, 2))) for _ in range(15_000)])
    grid = np.round(rng.random((10_000, 2)) * 32) / 32   # heavy ties
    streams = [
        (line, rng.uniform(-1, 1, (15_000, 1)), "sorted"),
        (line, rng.uniform(-1, 1, (10_000, 1)), "cover-tree"),
        (line, wc, "sorted"),
        (line, wc, "cover-tree"),
        (sq, rng.random((15_000, 2)), "cover-tree"),
        (euc, rng.random((15_000, 2)) ** 3, "cover-tree"),
        (sq, sm, "cover-tree"),
        (euc, grid, "cover-tree"),
        (sq, rng.random((16_000, 2)), "cover-tree"),
    ]
    rounds, div, ties = 0, 0, 0
    for space, X, backend in streams:
        rep = backend_equivalence_check(space, X, backend)
        rounds += rep.rounds
        div += len(rep.divergences)
        ties += len(rep.ties)
    ok = rounds == 100_000 and div == 0
    assert verdict(7, ok, f"rounds={rounds} divergences={div} tie_rounds={ties}")


def test_criterion_08_smoothed_threshold_rates(verdict):
    cfg = cfg_of(SMOOTHED_THRESHOLD, trials=10, audits=[])
    t0 = time.perf_counter()
    trials = [run_trial(cfg, t) for t in range(10)]
    dt = time.perf_counter() - t0
    med = [float(np.median(mistake_rates(trials, N))) for N in (100, 1000, 10_000)]
    ok = med[0] > med[1] > med[2] and med[2] < 0.05 and dt < 120
    assert verdict(8, ok, f"median rates at 10^2/10^3/10^4 = {med} runtime={dt:.1f}s")


def test_criterion_09_rate_curve_bound(verdict):
    cfg = cfg_of(SMOOTHED_THRESHOLD, trials=20, audits=["rate-bound"])
    trials = [run_trial(cfg, t) for t in range(20)]
    reps = audit_suite(cfg, trials)
    good = sum(r.passed for r in reps)
    ok = len(reps) == 20 and good >= 19
    tight = min(r.bound - r.observed for r in reps)
    assert verdict(9, ok, f"{good}/20 trials within the bound at every checkpoint (tightest slack {tight:.1f})")


def test_criterion_10_influence(verdict):
    cfg = ExperimentConfig.from_text(INFLUENCE)
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    dt = time.perf_counter() - t0
    reps = res.reports
    consts = {(r.detail["c1"], r.detail["c2"]) for r in reps}
    ok = len(reps) == 10 and all(r.passed for r in reps) and consts == {(16.0, 4.0)} and dt < 120
    worst = max(r.observed / r.bound for r in reps)
    assert verdict(10, ok, f"{sum(r.passed for r in reps)}/10 within bound, worst freq/bound={worst:.3f}, "
                           f"c1,c2={sorted(consts)} runtime={dt:.1f}s")


def test_criterion_11_geometry(verdict):
    t = np.linspace(0.0, 1.0, 20_000)
    seg = np.stack([t, np.full_like(t, 0.5)], axis=1)
    g = (np.arange(400) + 0.5) / 400
    square = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s1 = box_dimension_estimate(seg).slope
        s2 = box_dimension_estimate(square).slope
    sq = MetricSpace.cube(2, "euclidean")
    content = minkowski_content_estimate(seg, ReferenceMeasure(sq), n_samples=1_000_000, seed=11).content
    line = MetricSpace.interval(-1.0, 1.0)
    thr = minkowski_content_estimate(Threshold(line, 0.0).boundary_sample(1), ReferenceMeasure(line)).content
    ok = 0.85 <= s1 <= 1.15 and 1.8 <= s2 <= 2.2 and abs(content - 2) <= 0.2 and thr == 1.0
    assert verdict(11, ok, f"segment slope={s1:.4f} square slope={s2:.4f} segment content={content:.4f} "
                           f"threshold content={thr}")


def test_criterion_12_determinism(verdict, tmp_path):
    cfgs = [CONFIGS / "smoothed_threshold.cfg", CONFIGS / "smoothed_square.cfg"]
    differ, files = [], 0
    for cfg in cfgs:
        for fmt in ("csv", "json"):
            outs = [tmp_path / f"{cfg.stem}_{fmt}_{k}" for k in range(2)]
            for out in outs:
                main(["simulate", "--config", str(cfg), "--out", str(out), "--format", fmt,
                      "--seed", "12", "--horizon", "1500"])
            names = sorted(p.name for p in outs[0].iterdir())
            if names != sorted(p.name for p in outs[1].iterdir()):
                differ.append((cfg.stem, fmt, "file set"))
            for name in names:
                files += 1
                if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                    differ.append((cfg.stem, fmt, name))
    for command in ("geometry", "covertree"):
        cfg = CONFIGS / "smoothed_square.cfg"
        outs = [tmp_path / f"{command}_{k}" for k in range(2)]
        for out in outs:
            main([command, "--config", str(cfg), "--out", str(out), "--seed", "12", "--horizon", "1500"])
        for name in sorted(p.name for p in outs[0].iterdir()):
            files += 1
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                differ.append((command, name))
    ok = files > 0 and not differ
    assert verdict(12, ok, f"{files} files compared, differing={differ}")
