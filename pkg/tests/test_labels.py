import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import cKDTree

from onlinenn.labels import (
    Checkerboard,
    Halfspace,
    KochSnowflake,
    Threshold,
    UnionOfBalls,
    UnsupportedError,
    is_mutually_labeling,
    label,
    margin,
    margin_equals_boundary_distance_check,
    ml_covering_number_estimate,
    mutually_labeling_ball,
    v_r_membership,
)
from onlinenn.measure import ReferenceMeasure, mass_of_indicator
from onlinenn.metric import Ball, MetricSpace, distances

LINE = MetricSpace.interval(-1.0, 1.0)
UNIT = MetricSpace.interval(0.0, 1.0)
SQ_SUP = MetricSpace.cube(2, "sup")
SQ_EUC = MetricSpace.cube(2, "euclidean")
THR = Threshold(LINE, 0.0)


def exact_families():
    return [
        THR,
        Halfspace(SQ_SUP, [1.0, 2.0], 1.2),
        Halfspace(SQ_EUC, [1.0, -1.0], 0.1),
        UnionOfBalls(SQ_EUC, [[0.3, 0.3], [0.75, 0.7]], [0.2, 0.15]),
        UnionOfBalls(SQ_SUP, [[0.5, 0.5]], [0.3]),
        Checkerboard(SQ_SUP, 3),
        Checkerboard(SQ_EUC, 2),
    ]


def test_threshold_labels():
    assert label(THR, 0.25) == 1
    assert label(THR, 0.0) == 1
    assert label(THR, -0.001) == 0


def test_checkerboard_parity():
    assert label(Checkerboard(SQ_SUP, 2), (0.25, 0.75)) == 1
    assert label(Checkerboard(SQ_SUP, 2), (0.25, 0.25)) == 0


def test_threshold_margins():
    q = margin(THR, 0.25)
    assert q.value == 0.25 and q.exact
    assert margin(THR, 0.0).value == 0.0
    assert margin(THR, -0.5).value == 0.5


def test_halfspace_sup_margin_against_dense_boundary():
    eta = Halfspace(SQ_SUP, [1.0, 2.0], 1.2)
    # the boundary segment x + 2y = 1.2 inside the square, sampled finely
    t = np.linspace(0.0, 1.0, 2_000_001)
    B = np.stack([t, (1.2 - t) / 2], axis=1)
    B = B[(B[:, 1] >= 0) & (B[:, 1] <= 1)]
    rng = np.random.default_rng(5)
    for x in rng.random((25, 2)):
        brute = np.abs(B - x).max(axis=1).min()
        assert margin(eta, x).value == pytest.approx(brute, abs=1e-6)


def test_ml_checks_on_threshold():
    assert is_mutually_labeling(THR, Ball([0.5], 0.1)).ok
    bad = is_mutually_labeling(THR, Ball([0.05], 0.1), n_probes=2048, seed=1)
    assert not bad.ok and bad.witness is not None and bad.min_margin < 0.2
    assert is_mutually_labeling(THR, [[0.3]]).ok


def test_ml_ball_radius():
    b = mutually_labeling_ball(THR, 0.5)
    assert b.radius == pytest.approx(0.99 * 0.5 / 3)
    assert mutually_labeling_ball(THR, 0.0) is None
    with pytest.raises(ValueError):
        mutually_labeling_ball(THR, 0.5, safety=1.0)


def test_v_r_membership():
    assert v_r_membership(THR, 0.25, 0.2)
    assert not v_r_membership(THR, 0.25, 0.3)


def test_v_r_complement_mass_equals_r():
    nu = ReferenceMeasure(LINE)
    for r in (0.05, 0.2):
        est = mass_of_indicator(nu, lambda X: THR.margins(X) < r, 200_000, 9)
        assert abs(est.value - r) <= 3 * est.stderr


def test_ml_cover_of_threshold():
    nu = ReferenceMeasure(LINE)
    cov = ml_covering_number_estimate(THR, nu, 0.1, seed=0)
    assert cov.complete and cov.count <= 40 and cov.leftover.value < 1e-3
    big = ml_covering_number_estimate(THR, nu, 0.5, seed=0)
    assert big.count <= 4
    # every ball of the cover is mutually labeling
    for b in cov.balls:
        assert b.radius * 2 < THR.margins(b.center[None, :])[0] - b.radius


def test_ml_cover_budget_flags_incomplete():
    cov = ml_covering_number_estimate(THR, ReferenceMeasure(LINE), 0.01, budget=3, n_samples=2000, seed=0)
    assert cov.count == 3 and not cov.complete


def test_boundary_distance_checks():
    assert margin_equals_boundary_distance_check(THR, seed=0).max_discrepancy == 0.0
    rep = margin_equals_boundary_distance_check(Halfspace(SQ_EUC, [1.0, -1.0], 0.1), n_boundary=10_000, seed=0)
    assert rep.max_discrepancy < 1e-3
    with pytest.raises(UnsupportedError):
        margin_equals_boundary_distance_check(Halfspace(SQ_SUP, [1.0, 1.0], 1.0))


def test_margin_zero_on_boundary_points():
    for eta in exact_families():
        p = eta.anchor()
        assert eta.margins(p[None, :])[0] == pytest.approx(0.0, abs=1e-12)


def test_margin_ball_keeps_label():
    rng = np.random.default_rng(2)
    for eta in exact_families():
        sp = eta.space
        X = sp.lo_array + (sp.hi_array - sp.lo_array) * rng.random((1000, sp.dim))
        M = eta.margins(X)
        L = eta.labels(X)
        assert np.all(M >= 0)
        for x, m, y in zip(X[:60], M[:60], L[:60]):
            if not m > 0:
                continue
            r = min(m, sp.diameter) * (1 - 1e-9)
            # dense probes inside B(x, margin)
            P = x + (rng.random((400, sp.dim)) * 2 - 1) * r
            P = np.clip(P, sp.lo_array, sp.hi_array)
            P = P[distances(sp, P, x) < r]
            assert np.all(eta.labels(P) == y)


def test_margin_witness_is_differently_labeled():
    rng = np.random.default_rng(4)
    for eta in exact_families():
        sp = eta.space
        for x in sp.lo_array + (sp.hi_array - sp.lo_array) * rng.random((30, sp.dim)):
            q = eta.margin(x)
            if q.witness is not None:
                assert eta.label(q.witness) != eta.label(x)
                assert distances(sp, q.witness[None, :], x)[0] <= q.value * (1 + 1e-9)


def test_koch_margin_error_bound():
    eta = KochSnowflake(SQ_EUC, depth=3)
    assert not eta.exact and eta.error_bound() > 0
    rng = np.random.default_rng(0)
    X = rng.random((200, 2))
    fine = KochSnowflake(SQ_EUC, depth=3, per_edge=256)
    # the coarse estimate never undershoots the fine one by more than the fine error
    assert np.all(eta.margins(X) >= fine.margins(X) - fine.error_bound() - 1e-12)
    assert np.all(eta.margins(X) - fine.margins(X) <= eta.error_bound() + 1e-12)


def test_vr_equals_boundary_tube():
    eta = Halfspace(SQ_EUC, [2.0, 1.0], 1.3)
    B = eta.boundary_sample(10_000)
    rng = np.random.default_rng(7)
    X = rng.random((2000, 2))
    r = 0.1
    d, _ = cKDTree(B).query(X)
    inside = np.array([v_r_membership(eta, x, r) for x in X])
    clear = np.abs(d - r) > 1e-3
    assert np.all(inside[clear] == (d[clear] >= r))


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(0.01, 0.98))
def test_ml_ball_is_mutually_labeling(x, safety):
    b = mutually_labeling_ball(THR, x, safety)
    if b is None:
        assert safety * THR.margins(np.array([[x]]))[0] / 3 == 0
        return
    assert is_mutually_labeling(THR, b, n_probes=64, seed=0).ok


@settings(max_examples=100, deadline=None)
@given(st.tuples(st.floats(0, 1), st.floats(0, 1)), st.floats(0.01, 0.98))
def test_ml_ball_is_mutually_labeling_2d(x, safety):
    eta = UnionOfBalls(SQ_EUC, [[0.3, 0.3], [0.75, 0.7]], [0.2, 0.15])
    b = mutually_labeling_ball(eta, x, safety)
    if b is not None:
        assert is_mutually_labeling(eta, b, n_probes=128, seed=0).ok


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 1), st.floats(0.001, 1.0), st.floats(0.001, 1.0))
def test_v_r_nesting(x, r1, r2):
    lo, hi = sorted((r1, r2))
    if v_r_membership(THR, x, hi):
        assert v_r_membership(THR, x, lo)


def test_constructor_validation():
    with pytest.raises(ValueError):
        Threshold(SQ_SUP)
    with pytest.raises(ValueError):
        Halfspace(SQ_SUP, [0.0, 0.0])
    with pytest.raises(ValueError):
        UnionOfBalls(SQ_EUC, [[0.3, 0.3], [0.4, 0.3]], [0.1, 0.1])
    with pytest.raises(ValueError):
        UnionOfBalls(SQ_EUC, [[0.05, 0.5]], [0.1])


def test_infinite_margin_when_one_class_is_empty():
    eta = Threshold(UNIT, 0.0)  # t at the left edge: everything labeled 1
    assert label(eta, 0.7) == 1
    assert math.isinf(margin(eta, 0.7).value)
    b = mutually_labeling_ball(eta, 0.7)
    assert b is not None and b.radius > UNIT.diameter * 0.9
