import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onlinenn.covertree import (
    CoverTree,
    DuplicateError,
    SeparatedEventLog,
    TailConfig,
    decomposition_check,
    packing_bound_audit,
    packing_upper_bound,
    tail_masses_1d,
    tail_rank,
    tail_rank_value,
    tail_set_mass,
    top_rank,
)
from onlinenn.measure import ReferenceMeasure
from onlinenn.metric import MetricSpace

UNIT = MetricSpace.interval(0.0, 1.0)
SQ = MetricSpace.cube(2, "sup")
SQ_EUC = MetricSpace.cube(2, "euclidean")


def build(space, pts):
    t = CoverTree(space)
    for p in pts:
        t.insert(p)
    return t


def test_top_rank_is_exact_on_dyadics():
    assert top_rank(0.5) == 0       # 0.5 < 2^-1 is false
    assert top_rank(0.4999) == 1
    assert top_rank(0.25) == 1
    assert top_rank(1.0) == -1
    assert top_rank(0.3) == 1


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-300, 4.0))
def test_top_rank_definition(s):
    L = top_rank(s)
    assert s < math.ldexp(1.0, -L) and not s < math.ldexp(1.0, -(L + 1))


def test_insert_examples():
    t = CoverTree(UNIT)
    r0 = t.insert(0.0)
    assert (r0.index, r0.rank, r0.parent) == (0, 0, None)
    r1 = t.insert(0.6)
    assert (r1.rank, r1.parent) == (1, 0) and t.generation_count(0) == 1
    r2 = t.insert(0.13)
    assert (r2.rank, r2.parent) == (3, 0) and t.generation_count(0) == 2
    assert t.insert(0.6).duplicate


def test_neighbor_examples():
    t = build(UNIT, [0.0])
    b = t.neighbor(0.3)
    assert (b.center, b.level, b.radius) == (0, 1, 0.5)
    t.insert(0.6)
    b = t.neighbor(0.7)
    assert (b.center, b.level, b.radius) == (1, 3, 0.125)
    with pytest.raises(DuplicateError):
        t.neighbor(0.6)


def test_tail_rank_examples():
    assert tail_rank_value(1, 0, 1.0, 1, 1 / 8) == 5
    assert tail_rank_value(1, 1, 1.0, 1, 1 / 8) == 6
    assert tail_rank_value(0, 2, 4.0, 2, 0.01) == 8


def test_root_tail_ball():
    t = build(UNIT, [0.3])
    cfg = TailConfig(0.25, 2.0, 1)
    assert tail_rank(t, 0, 1, cfg) == 4
    m = tail_set_mass(t, 1, cfg, ReferenceMeasure(UNIT))
    assert m.exact and m.value == pytest.approx(1 / 8) and m.value < 0.25


def test_empty_tree_tail_mass():
    assert tail_set_mass(CoverTree(UNIT), 0, TailConfig(0.1, 2.0, 1), ReferenceMeasure(UNIT)).value == 0.0


def test_tail_masses_on_random_sequences_1d():
    nu = ReferenceMeasure(UNIT)
    cfg = TailConfig(0.1, 2.0, 1)
    rng = np.random.default_rng(0)
    for _ in range(10):
        t = build(UNIT, rng.random((500, 1)))
        masses = tail_masses_1d(t, cfg, nu)
        assert len(masses) == len(t) and np.all(masses < 0.1)
        # the incremental path agrees with the direct union computation
        for m in (1, 17, 250, len(t)):
            assert masses[m - 1] == pytest.approx(tail_set_mass(t, m, cfg, nu).value, abs=1e-15)


def test_tail_mass_on_square_monte_carlo():
    nu = ReferenceMeasure(SQ)
    cfg = TailConfig(0.1, 4.0, 2)
    t = build(SQ, np.random.default_rng(1).random((200, 2)))
    m = tail_set_mass(t, len(t), cfg, nu, n_samples=200_000, seed=3)
    assert m.value < 0.1 + 3 * m.stderr


def test_decomposition_example():
    t = build(UNIT, [0.5])
    rep = decomposition_check(t, 0.9, [[0.5]])
    assert rep.applicable and rep.passed
    assert (rep.ball.center, rep.ball.radius) == (0, 0.5)
    assert rep.separation == pytest.approx(0.4)


def test_decomposition_skips_when_nearest_is_not_in_tree():
    t = build(UNIT, [0.5])
    rep = decomposition_check(t, 0.9, [[0.5], [0.85]])
    assert not rep.applicable and rep.passed


def test_packing_log_example():
    log = SeparatedEventLog(UNIT)
    for n, x in enumerate([0.0, 0.9, 0.45], start=1):
        log.charge("U", [0.5], 0.51, 0.4, [x], n)
    res = packing_bound_audit(log, UNIT)
    assert res.passed and res.n_charged == 3 and res.exact_checked == 1
    assert packing_upper_bound(UNIT, [0.5], 0.51, 0.4) >= 3


def test_packing_log_detects_close_pair():
    log = SeparatedEventLog(UNIT)
    log.charge("U", [0.5], 0.5, 0.4, [0.2], 1)
    log.charge("U", [0.5], 0.5, 0.4, [0.3], 2)
    res = packing_bound_audit(log, UNIT)
    assert not res.passed and res.violations[0]["kind"] == "not-separated"


def test_single_event_is_a_packing():
    log = SeparatedEventLog(SQ)
    log.charge((0, 1), [0.5, 0.5], 0.25, 0.1, [0.55, 0.45], 7)
    assert packing_bound_audit(log, SQ).passed


def test_dump_load_round_trip():
    t = build(SQ_EUC, np.random.default_rng(2).random((300, 2)))
    text = t.dump()
    again = CoverTree.load(SQ_EUC, text)
    assert again.dump() == text
    assert again.rank == t.rank and again.parent == t.parent
    with pytest.raises(ValueError):
        CoverTree.load(SQ_EUC, text.replace("0\t", "5\t", 1))


def rank_from_scratch(tree, k):
    """Insertion rank of node k against nodes 0..k-1, from the definition."""
    if k == 0:
        return 0
    x = tree.points[k]
    L = 1
    while True:
        covered = any(
            tree.rank[j] <= L and tree._pair(x, tree.points[j]) / tree.R < math.ldexp(1.0, -L)
            for j in range(k)
        )
        if not covered:
            return L
        L += 1


@pytest.mark.parametrize("space", [UNIT, SQ, SQ_EUC], ids=["line", "sup", "euclidean"])
def test_ranks_parents_and_generations(space):
    rng = np.random.default_rng(3)
    # a clustered sample stresses deep ranks
    base = rng.random((300, space.dim))
    pts = np.vstack([base, base[:100] * 1e-3 + 0.5, base[:50] * 0.5])
    t = build(space, pts)
    n = len(t)
    assert n <= len(pts)
    for k in range(n):
        assert t.rank[k] == rank_from_scratch(t, k)
        if k:
            p = t.parent[k]
            L = t.rank[k]
            # the parent's ball of radius 2^-(L-1) holds the child, and the parent has rank below L
            assert t._pair(t.points[k], t.points[p]) / t.R < math.ldexp(1.0, -(L - 1)) or k in t.root_edges
            assert t.rank[p] <= L - 1
    assert sum(t.generation_count(k) for k in range(n)) <= n


def test_double_cover_on_random_queries():
    rng = np.random.default_rng(4)
    for space in (UNIT, SQ, SQ_EUC):
        t = build(space, rng.random((400, space.dim)) ** 3)
        for x in rng.random((2000, space.dim)):
            if t.nearest(x)[0] == 0:
                continue
            assert t.check_double_cover(x, t.neighbor(x))


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(5)
    for space in (SQ, SQ_EUC):
        P = rng.random((500, 2))
        t = build(space, P)
        for x in rng.random((300, 2)):
            if space.kind == "sup":
                d = np.abs(P - x).max(axis=1)
            else:
                d = np.sqrt(((P - x) ** 2).sum(axis=1))
            got = t.nearest(x)
            assert got[0] == pytest.approx(d.min(), abs=0, rel=1e-15) and got[1] == int(np.argmin(d))


def test_tail_config_validation():
    with pytest.raises(ValueError):
        TailConfig(1.5, 2.0, 1)
    with pytest.raises(ValueError):
        TailConfig(0.1, 0.0, 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=120), st.sampled_from([0.25, 0.1, 0.01]))
def test_tail_mass_below_delta_property(values, delta):
    t = build(UNIT, [[v] for v in values])
    masses = tail_masses_1d(t, TailConfig(delta, 2.0, 1), ReferenceMeasure(UNIT))
    assert np.all(masses < delta)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=60),
       st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_double_cover_property(points, q):
    t = build(SQ, points)
    if t.nearest(q)[0] == 0:
        return
    assert t.check_double_cover(q, t.neighbor(q))
