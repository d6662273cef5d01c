"""Command-line interface: ``onlinenn {simulate,audit,geometry,covertree,report}``.

Exit codes: 0 when every audit passed or was skipped, 1 when an audit
failed, 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, stream_seed
from .covertree import CoverTree
from .labels import PrecisionError
from .geometry import box_dimension_estimate, minkowski_content_estimate
from .harness import AuditContext, AuditReport, audit_delta_tail, audit_suite, replay, run_experiment, run_trial
from .report import (
    read_traces,
    reports_to_csv,
    validate_reports,
    write_experiment,
    write_reports,
    write_text,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onlinenn", description="Online 1-NN experiments and audits.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("simulate", "run trials, write traces, curve and audit reports"),
        ("audit", "re-run the configured audits on traces already in --out"),
        ("geometry", "estimate boundary dimension and Minkowski content"),
        ("covertree", "build, dump and check the cover tree of one trial"),
        ("report", "print a stored report file as csv or json"),
    ]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, required=name != "report")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=Path)
        s.add_argument("--format", choices=["csv", "json"], default="json")
        s.add_argument("--trials", type=int)
        s.add_argument("--horizon", type=int)
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    return cfg.with_overrides(**{
        "seed": args.seed, "trials": args.trials, "horizon": args.horizon,
        "out": str(args.out) if args.out is not None else None,
    })


def _summarize(reports: Sequence[AuditReport]) -> int:
    failed = [r for r in reports if not r.passed]
    for r in reports:
        tag = f"trial {r.trial}" if r.trial is not None else "-"
        print(f"{r.audit:18s} {tag:10s} {r.status}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, fmt: str) -> int:
    res = run_experiment(cfg)
    out = Path(cfg["out"])
    write_experiment(out, res.trials, res.reports, res.curve, fmt, cfg.to_text(skip=("out",)))
    for row in res.curve:
        if row[0] == "median":
            print(f"N={row[1]:<10d} median rate {row[3]:.6g}")
    return _summarize(res.reports)


def cmd_audit(cfg: ExperimentConfig, fmt: str) -> int:
    out = Path(cfg["out"])
    trials = read_traces(out)
    if not trials:
        print(f"no traces found in {out}", file=sys.stderr)
        return EXIT_CONFIG
    reports = audit_suite(cfg, trials)
    write_reports(out, reports, fmt)
    return _summarize(reports)


def cmd_geometry(cfg: ExperimentConfig, fmt: str) -> int:
    import warnings

    out = Path(cfg["out"])
    eta, measure = cfg.eta(), cfg.measure()
    seed = stream_seed(cfg["seed"], 0, 3)
    B = eta.boundary_sample(cfg["horizon"], seed=seed)
    kind = "euclidean" if cfg.space().kind == "euclidean" else "sup"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        dim = box_dimension_estimate(B, kind=kind)
    cont = minkowski_content_estimate(B, measure, n_samples=cfg["mc.n_samples"], seed=seed)
    summary = {
        "family": eta.family,
        "boundary_points": int(B.shape[0]),
        "dimension": dim.slope,
        "dimension_truncated": dim.truncated,
        "content": cont.content if np.isfinite(cont.content) else None,
        "content_intercept": cont.intercept if np.isfinite(cont.intercept) else None,
        "content_exact": cont.exact,
        "warnings": [str(w.message) for w in caught],
    }
    write_text(out / "dimension.csv", dim.to_csv())
    write_text(out / "content.csv", cont.to_csv())
    if fmt == "csv":
        write_text(out / "geometry.csv", "key,value\n" + "".join(f"{k},{json.dumps(v)}\n" for k, v in summary.items()))
    else:
        write_text(out / "geometry.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"dimension {dim.slope:.4f}  content {summary['content']}")
    return EXIT_OK


def cmd_covertree(cfg: ExperimentConfig, fmt: str) -> int:
    out = Path(cfg["out"])
    trial = run_trial(cfg, 0)
    space = cfg.space()
    tree = CoverTree(space)
    for r in trial.records:
        tree.insert(r.instance)
    text = tree.dump()
    write_text(out / "tree.txt", text)
    again = CoverTree.load(space, (out / "tree.txt").read_text()).dump()
    reports = [AuditReport("tree-roundtrip", again == text, float(again != text), 0.0, [], 0,
                           detail={"nodes": len(tree)})]
    rng = np.random.default_rng(stream_seed(cfg["seed"], 0, 1))
    probes = cfg.measure().sample(rng, 1000)
    bad = []
    for x in probes:
        if tree.nearest(x)[0] == 0.0:
            continue
        ball = tree.neighbor(x)
        if not tree.check_double_cover(x, ball):
            bad.append({"query": x.tolist(), "center": ball.center, "level": ball.level})
    reports.append(AuditReport("double-cover", not bad, float(len(bad)), 0.0, bad[:20], 0,
                               detail={"queries": int(probes.shape[0])}))
    everything = cfg.replace(**{"indicator.lo": None, "indicator.hi": None})
    trial.flags = np.ones(len(trial.records), dtype=np.uint8)
    reports.append(audit_delta_tail(AuditContext(everything), trial, replay(everything, trial)))
    write_reports(out, reports, fmt)
    return _summarize(reports)


def cmd_report(args) -> int:
    out = args.out or Path("out")
    path = out / "reports.json"
    try:
        doc = json.loads(path.read_text())
        validate_reports(doc)
    except (OSError, ValueError) as e:
        print(f"cannot read {path}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # jsonschema.ValidationError
        print(f"{path} does not match the report schema: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.format == "csv":
        sys.stdout.write(reports_to_csv(doc))
    else:
        sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if doc["pass"] else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "audit": cmd_audit, "geometry": cmd_geometry, "covertree": cmd_covertree}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(args)
    try:
        cfg = _load(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args.format)
    except PrecisionError as e:
        print(f"process error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
