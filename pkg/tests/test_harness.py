import json

import numpy as np
import pytest

from onlinenn.config import ConfigError, ExperimentConfig, parse_value, stream_seed
from onlinenn.harness import (
    AuditReport,
    audit_suite,
    checkpoints,
    influence_constants,
    replay,
    run_experiment,
    run_trial,
)
from onlinenn.report import (
    reports_document,
    reports_to_csv,
    reports_to_json,
    trace_from_csv,
    trace_to_csv,
    validate_reports,
)

WORST = """
version = 1
space.lo = -1
space.hi = 1
label.t = 0
process.class = worst-case-threshold
horizon = 100
audits = ["all"]
"""

SMOOTH = """
version = 1
space.lo = -1
space.hi = 1
label.t = 0
process.class = smoothed
process.sigma = 0.1
horizon = 3000
indicator.lo = -0.05
indicator.hi = 0.05
mc.n_samples = 20000
ml.n_samples = 20000
audits = ["all"]
"""


def cfg_of(text, **over):
    return ExperimentConfig.from_text(text).replace(**over)


# ---------------------------------------------------------------- config


def test_config_parsing_and_defaults():
    cfg = ExperimentConfig.from_text(WORST)
    assert cfg["horizon"] == 100 and cfg["trials"] == 1 and cfg["backend"] == "auto"
    assert cfg.audits()[0] == "mutually-labeling" and len(cfg.audits()) == 7
    assert parse_value(" [1, 2] ") == [1, 2] and parse_value("smoothed") == "smoothed"


@pytest.mark.parametrize("text, needle", [
    ("space.kind = interval", "version"),
    ("version = 1\nbogus = 3", "bogus"),
    ("version = 1\nhorizon = 5\nhorizon = 6", "duplicate"),
    ("version = 1\nhorizon = -5", "horizon"),
    ("version = 1\nno equals sign", "key = value"),
    ("version = 1\nprocess.class = brownian", "brownian"),
    ("version = 1\nspace.kind = sup\nspace.dim = 2\nlabel.family = halfspace\nbackend = sorted", "sorted"),
    ("version = 1\nindicator.lo = 0.2", "indicator"),
    ("version = 2", "version"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_text(text)


def test_unsupported_combination_is_a_config_error():
    text = "version = 1\nspace.kind = euclidean\nspace.dim = 2\nlabel.family = koch\nprocess.class = worst-case-general"
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_config_text_round_trip():
    cfg = ExperimentConfig.from_text(SMOOTH)
    again = ExperimentConfig.from_text("version = 1\n" + cfg.to_text(skip=("version",)))
    assert again.values == cfg.values


def test_stream_seeds_are_independent_and_stable():
    a = np.random.default_rng(stream_seed(7, 0, 0)).random(4)
    b = np.random.default_rng(stream_seed(7, 0, 0)).random(4)
    c = np.random.default_rng(stream_seed(7, 1, 0)).random(4)
    d = np.random.default_rng(stream_seed(7, 0, 1)).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c) and not np.array_equal(a, d)


# ---------------------------------------------------------------- harness


def test_checkpoints():
    assert checkpoints(100) == [10, 100]
    assert checkpoints(2500) == [10, 100, 1000, 2500]
    assert checkpoints(7) == [7]


def test_worst_case_run_and_gating():
    res = run_experiment(cfg_of(WORST))
    assert [r for r in res.curve if r[0] == "median"][-1][3] == 1.0
    by = {r.audit: r for r in res.reports}
    assert by["mutually-labeling"].passed and by["mutually-labeling"].status == "pass"
    for name in ("influence", "nn-ergodicity", "rate-bound"):
        assert by[name].status == "skipped" and by[name].passed
    assert res.passed


def test_iid_median_rate_decreases():
    cfg = cfg_of(SMOOTH, **{"process.class": "iid", "horizon": 10_000, "trials": 10, "audits": []})
    res = run_experiment(cfg)
    med = {c: rate for t, c, _, rate in res.curve if t == "median"}
    assert med[10_000] < med[100]
    assert res.reports == []


def test_smoothed_audits_pass():
    res = run_experiment(cfg_of(SMOOTH, trials=2))
    for r in res.reports:
        assert r.passed, r.to_dict()
    kinds = {r.audit for r in res.reports}
    assert kinds == {"mutually-labeling", "hit-packing", "delta-tail", "decomposition",
                     "influence", "nn-ergodicity", "rate-bound"}


def test_replay_matches_run_and_round_trips_through_csv():
    cfg = cfg_of(SMOOTH, horizon=800)
    t = run_trial(cfg, 0)
    back = trace_from_csv(trace_to_csv(t))
    assert back.keys == t.keys
    assert np.array_equal(back.flags, t.flags)
    assert np.array_equal(back.instances, t.instances)
    again = replay(cfg, back)
    assert again.keys == t.keys and again.nn_indicated == t.replayed.nn_indicated
    assert not again.defects


def test_trace_without_event_log_skips_hit_packing():
    cfg = cfg_of(SMOOTH, horizon=300)
    t = run_trial(cfg, 0)
    text = trace_to_csv(t)
    rows = [r.split(",") for r in text.splitlines()]
    col = rows[0].index("sep_event_keys")
    stripped = "\n".join(",".join(r[:col] + r[col + 1:]) for r in rows) + "\n"
    back = trace_from_csv(stripped)
    assert back.keys is None
    (rep,) = audit_suite(cfg, [back], ["hit-packing"])
    assert rep.status == "skipped" and rep.passed


def test_tampered_trace_fails_mutually_labeling():
    cfg = cfg_of(SMOOTH, horizon=200, audits=["mutually-labeling"])
    t = run_trial(cfg, 0)
    # two mistakes planted deep inside the positive class
    recs = list(t.records)
    for i in (50, 51):
        r = recs[i]
        recs[i] = type(r)(r.n, np.array([0.8 + i * 1e-4]), r.nn_index, r.nn_distance, 0, 1, True)
    t.records = recs
    t.replayed = None
    (rep,) = audit_suite(cfg, [t])
    assert not rep.passed and rep.observed >= 2 and rep.witnesses


def test_influence_constants():
    assert influence_constants(2.0, 1) == (16.0, 4.0)
    c1, c2 = influence_constants(4.0, 2)
    assert c1 == 16 * (3 + 1) and c2 == 8


# ---------------------------------------------------------------- reports


def test_empty_trace_is_header_only():
    from onlinenn.harness import Trial

    text = trace_to_csv(Trial(0, [], np.zeros(0, dtype=np.uint8), []), dim=2)
    assert text.splitlines() == [
        "n,x0,x1,nn_index,nn_distance,predicted,truth,mistake,cum_mistakes,rate,sep_event_keys,indicator_flag"
    ]


def test_three_round_trace_round_trip():
    t = run_trial(cfg_of(WORST, horizon=3), 0)
    text = trace_to_csv(t)
    assert len(text.splitlines()) == 4
    back = trace_from_csv(text)
    assert trace_to_csv(back) == text
    assert [r.mistake for r in back.records] == [True, True, True]
    assert back.records[0].predicted is None


def test_reports_json_validates():
    reports = [
        AuditReport("influence", True, 0.1, 0.5, [], 0, detail={"gamma": 0.02}),
        AuditReport.skipped("rate-bound", "out of model", 0),
        AuditReport("delta-tail", False, 0.3, float("inf"), [{"prefix": 3}], 1),
    ]
    doc = json.loads(reports_to_json(reports))
    validate_reports(doc)
    assert doc["pass"] is False
    assert doc["reports"][1]["status"] == "skipped" and doc["reports"][1]["pass"] is True
    assert doc["reports"][0]["slack"] == pytest.approx(0.4)
    assert doc["reports"][2]["bound"] is None  # non-finite values are written as null
    assert reports_to_csv(doc).splitlines()[0] == "audit,trial,status,pass,observed,bound,slack,witnesses"


def test_schema_rejects_bad_documents():
    import jsonschema

    good = reports_document([AuditReport("influence", True, 0.1, 0.5)])
    validate_reports(good)
    bad = json.loads(json.dumps(good))
    bad["reports"][0]["audit"] = "astrology"
    with pytest.raises(jsonschema.ValidationError):
        validate_reports(bad)
    bad = json.loads(json.dumps(good))
    bad["reports"][0]["status"] = "skipped"
    bad["reports"][0]["pass"] = False
    with pytest.raises(jsonschema.ValidationError):
        validate_reports(bad)
