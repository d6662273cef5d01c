"""Trace CSV, rate-curve CSV and audit-report serialization.

Floats are written with ``repr`` so a trace read back reproduces every
instance bit for bit, and two runs from the same seed produce identical
bytes.
"""

from __future__ import annotations

import csv
import io
import json
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .harness import AuditReport, Trial
from .learner import RoundRecord

TRACE_TAIL = ["nn_index", "nn_distance", "predicted", "truth", "mistake", "cum_mistakes", "rate",
              "sep_event_keys", "indicator_flag"]


def trace_header(dim: int) -> list[str]:
    return ["n"] + [f"x{j}" for j in range(dim)] + TRACE_TAIL


def _opt(v) -> str:
    return "" if v is None else repr(v)


def trace_to_csv(trial: Trial, dim: Optional[int] = None) -> str:
    if dim is None:
        dim = trial.records[0].instance.shape[0] if trial.records else 1
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(trace_header(dim))
    cum = 0
    keys = trial.keys
    for i, r in enumerate(trial.records):
        cum += int(r.mistake)
        w.writerow(
            [r.n] + [repr(v) for v in r.instance.tolist()]
            + [_opt(r.nn_index), _opt(r.nn_distance), _opt(r.predicted), r.truth, int(r.mistake),
               cum, repr(cum / r.n), keys[i] if keys is not None else "", int(trial.flags[i])]
        )
    return out.getvalue()


def trace_from_csv(text: str, index: int = 0) -> Trial:
    """Parse a trace written by :func:`trace_to_csv`.

    A file without the ``sep_event_keys`` column yields ``keys=None``
    (no event log).
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty trace")
    head = rows[0]
    coords = [h for h in head if h.startswith("x") and h[1:].isdigit()]
    col = {h: i for i, h in enumerate(head)}
    need = ["n", "nn_index", "nn_distance", "predicted", "truth", "mistake", "indicator_flag"]
    missing = [h for h in need if h not in col]
    if missing or not coords:
        raise ValueError(f"trace is missing columns: {', '.join(missing) or 'coordinates'}")
    has_keys = "sep_event_keys" in col
    records, flags, keys = [], [], []
    for row in rows[1:]:
        x = np.array([float(row[col[c]]) for c in coords])
        nn = row[col["nn_index"]]
        pred = row[col["predicted"]]
        records.append(RoundRecord(
            int(row[col["n"]]), x,
            int(nn) if nn else None,
            float(row[col["nn_distance"]]) if nn else None,
            int(pred) if pred else None,
            int(row[col["truth"]]),
            row[col["mistake"]] == "1",
        ))
        flags.append(int(row[col["indicator_flag"]]))
        keys.append(row[col["sep_event_keys"]] if has_keys else "")
    return Trial(index, records, np.array(flags, dtype=np.uint8), keys if has_keys else None)


def curve_to_csv(rows: Iterable) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["trial", "checkpoint", "cum_mistakes", "rate"])
    for t, c, m, r in rows:
        w.writerow([t, c, repr(m) if isinstance(m, float) else m, repr(r)])
    return out.getvalue()


def load_schema() -> dict:
    return json.loads(resources.files("onlinenn").joinpath("schemas/audit_report.schema.json").read_text())


def validate_reports(doc: dict) -> None:
    """Raise ``jsonschema.ValidationError`` when ``doc`` does not match the shipped schema."""
    import jsonschema

    jsonschema.validate(doc, load_schema())


def reports_document(reports: Iterable[AuditReport]) -> dict:
    items = [r.to_dict() for r in reports]
    return {"version": 1, "pass": all(i["pass"] for i in items), "reports": items}


def reports_to_json(reports: Iterable[AuditReport]) -> str:
    doc = reports_document(reports)
    validate_reports(doc)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


REPORT_COLUMNS = ["audit", "trial", "status", "pass", "observed", "bound", "slack", "witnesses"]


def reports_to_csv(doc_or_reports) -> str:
    doc = doc_or_reports if isinstance(doc_or_reports, dict) else reports_document(doc_or_reports)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in doc["reports"]:
        w.writerow([
            r["audit"], "" if r["trial"] is None else r["trial"], r["status"], int(r["pass"]),
            _opt(r["observed"]), _opt(r["bound"]), _opt(r["slack"]), len(r["witnesses"]),
        ])
    return out.getvalue()


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def write_experiment(out: Path, trials: list, reports: list, curve: list, fmt: str = "json",
                     config_text: Optional[str] = None) -> list[Path]:
    """Write traces, the rate curve and the audit reports under ``out``."""
    paths = []
    for t in trials:
        p = out / f"trace_{t.index:03d}.csv"
        write_text(p, trace_to_csv(t))
        paths.append(p)
    p = out / "curve.csv"
    write_text(p, curve_to_csv(curve))
    paths.append(p)
    if config_text is not None:
        p = out / "config.txt"
        write_text(p, config_text)
        paths.append(p)
    paths.append(write_reports(out, reports, fmt))
    return paths


def write_reports(out: Path, reports: list, fmt: str = "json") -> Path:
    if fmt == "csv":
        p = out / "reports.csv"
        write_text(p, reports_to_csv(reports))
    else:
        p = out / "reports.json"
        write_text(p, reports_to_json(reports))
    return p


def read_traces(out: Path) -> list[Trial]:
    files = sorted(out.glob("trace_*.csv"))
    return [trace_from_csv(f.read_text(), int(f.stem.split("_")[1])) for f in files]
