"""Experiment configuration: a flat ``key = value`` text format.

Values are parsed as JSON when possible (numbers, lists, ``true``,
``null``, quoted strings) and otherwise taken as bare strings.  Every key is
typed; unknown keys and a missing or unsupported ``version`` are errors.

Example::

    version = 1
    space.kind = interval
    space.lo = -1
    space.hi = 1
    label.family = threshold
    process.class = smoothed
    process.sigma = 0.1
    horizon = 10000
    audits = ["mutually-labeling", "hit-packing"]
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .labels import FAMILIES, LabelFunction
from .measure import ReferenceMeasure
from .metric import MetricSpace

VERSION = 1

AUDITS = (
    "mutually-labeling",
    "hit-packing",
    "delta-tail",
    "decomposition",
    "influence",
    "nn-ergodicity",
    "rate-bound",
)


class ConfigError(ValueError):
    """Malformed or unsupported experiment configuration."""


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _vec(v):
    return _num(v) or (isinstance(v, list) and all(_num(e) for e in v))


# key -> (validator, default, description)
SCHEMA: dict[str, tuple] = {
    "version": (lambda v: isinstance(v, int), None, "format version (required)"),
    "space.kind": (lambda v: v in ("interval", "sup", "euclidean"), "interval", "metric"),
    "space.dim": (lambda v: isinstance(v, int) and v >= 1, 1, "dimension"),
    "space.lo": (_vec, 0.0, "domain lower corner"),
    "space.hi": (_vec, 1.0, "domain upper corner"),
    "space.d": (lambda v: isinstance(v, int) and v >= 0, 0, "doubling dimension (0 = dim)"),
    "space.c": (lambda v: _num(v) and v >= 0, 0.0, "upper-doubling constant (0 = default)"),
    "measure.boxes": (lambda v: isinstance(v, list), [], "mixture boxes [[lo...], [hi...]]"),
    "measure.weights": (lambda v: isinstance(v, list), [], "mixture weights"),
    "label.family": (lambda v: v in FAMILIES, "threshold", "label family"),
    "label.t": (lambda v: v is None or _num(v), None, "threshold location"),
    "label.w": (lambda v: v is None or _vec(v), None, "halfspace normal"),
    "label.b": (lambda v: v is None or _num(v), None, "halfspace offset"),
    "label.centers": (lambda v: v is None or isinstance(v, list), None, "ball centres"),
    "label.radii": (lambda v: v is None or isinstance(v, list), None, "ball radii"),
    "label.cells": (lambda v: isinstance(v, int) and v >= 1, 2, "checkerboard cells per axis"),
    "label.depth": (lambda v: isinstance(v, int) and v >= 0, 4, "snowflake depth"),
    "process.class": (lambda v: isinstance(v, str), "iid", "process class"),
    "process.sigma": (lambda v: _num(v) and v > 0, 0.1, "smoothing parameter"),
    "process.alpha": (lambda v: _num(v) and 0 < v <= 1, 0.5, "domination exponent"),
    "process.mode": (lambda v: isinstance(v, str), "adaptive-to-learner", "history-access mode"),
    "process.center": (lambda v: v is None or _vec(v), None, "fixed attack centre"),
    "horizon": (lambda v: isinstance(v, int) and v >= 1, 1000, "rounds per trial"),
    "trials": (lambda v: isinstance(v, int) and v >= 1, 1, "independent trials"),
    "seed": (lambda v: isinstance(v, int) and 0 <= v < 2**64, 0, "root seed"),
    "backend": (lambda v: v in ("auto", "brute", "cover-tree", "sorted"), "auto", "nearest-neighbor backend"),
    "audits": (lambda v: isinstance(v, list) and all(a in AUDITS or a == "all" for a in v), [], "audits to run"),
    "out": (lambda v: isinstance(v, str), "out", "output directory"),
    "tail.delta": (lambda v: _num(v) and 0 < v < 1, 0.1, "tail mass target"),
    "tail.c": (lambda v: v is None or (_num(v) and v > 0), None, "doubling constant for tails"),
    "tail.d": (lambda v: v is None or (isinstance(v, int) and v > 0), None, "doubling dimension for tails"),
    "tail.max_prefixes": (lambda v: isinstance(v, int) and v >= 1, 5000, "prefixes checked before thinning"),
    "mc.n_samples": (lambda v: isinstance(v, int) and v >= 1, 1_000_000, "Monte Carlo sample size"),
    "indicator.lo": (lambda v: v is None or _vec(v), None, "indicator box lower corner"),
    "indicator.hi": (lambda v: v is None or _vec(v), None, "indicator box upper corner"),
    "azuma.p": (lambda v: _num(v) and 0 < v < 1, 0.05, "failure probability in the rate bound"),
    "rate.c1": (lambda v: _num(v) and v >= 0, 0.25, "slack exponent on the cover count"),
    "rate.c2": (lambda v: _num(v) and v >= 0, 0.25, "slack on the boundary content"),
    "rate.schedule": (lambda v: v is None or (isinstance(v, list) and all(_num(e) and e > 0 for e in v)), None,
                      "radii for the cover-count fit (fractions of the diameter)"),
    "ml.safety": (lambda v: _num(v) and 0 < v < 1, 0.99, "mutually-labeling ball safety factor"),
    "ml.r": (lambda v: v is None or (_num(v) and v > 0), None, "margin floor of the audited cover"),
    "ml.n_samples": (lambda v: isinstance(v, int) and v >= 1, 100_000, "samples for mutually-labeling covers"),
}


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with the given keys replaced; None values leave a key unchanged."""
        return self.replace(**{k: v for k, v in kw.items() if v is not None})

    def replace(self, **kw) -> "ExperimentConfig":
        """Copy with the given keys set (None included); dotted keys via ``**{"a.b": v}``."""
        vals = dict(self.values)
        vals.update(kw)
        return ExperimentConfig.from_dict(vals)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "version" not in raw:
            raise ConfigError("missing required key: version")
        if raw["version"] != VERSION:
            raise ConfigError(f"unsupported config version {raw['version']!r} (expected {VERSION})")
        vals = {}
        for key, (ok, default, _) in SCHEMA.items():
            v = raw.get(key, default)
            if isinstance(v, int) and not isinstance(v, bool) and key in _FLOAT_KEYS:
                v = float(v)
            if not ok(v):
                raise ConfigError(f"invalid value for {key}: {v!r}")
            vals[key] = v
        cfg = cls(vals)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        raw = {}
        for i, line in enumerate(text.splitlines(), start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            if "=" not in s:
                raise ConfigError(f"line {i}: expected 'key = value'")
            key, value = s.split("=", 1)
            key = key.strip()
            if key in raw:
                raise ConfigError(f"line {i}: duplicate key {key}")
            raw[key] = parse_value(value)
        return cls.from_dict(raw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        return cls.from_text(text)

    def to_text(self, skip: tuple = ()) -> str:
        return "".join(f"{k} = {json.dumps(self.values[k])}\n" for k in SCHEMA if k not in skip)

    # ------------------------------------------------------------ builders

    def validate(self) -> None:
        from .processes import GENERATORS, MODES

        if self["process.class"] not in GENERATORS:
            raise ConfigError(f"unknown process class {self['process.class']!r}")
        if self["process.mode"] not in MODES:
            raise ConfigError(f"unknown history-access mode {self['process.mode']!r}")
        try:
            space = self.space()
            measure = self.measure()
            eta = self.eta()
            if self["backend"] == "sorted" and space.dim != 1:
                raise ConfigError("the sorted backend needs a one-dimensional space")
            self.indicator_box()
            self.generator(0)
        except ConfigError:
            raise
        except (ValueError, NotImplementedError, RuntimeError) as e:
            raise ConfigError(str(e)) from e
        del measure, eta

    def space(self) -> MetricSpace:
        dim = self["space.dim"]
        kind = self["space.kind"]
        lo, hi = self["space.lo"], self["space.hi"]
        lo = [float(lo)] * dim if _num(lo) else [float(v) for v in lo]
        hi = [float(hi)] * dim if _num(hi) else [float(v) for v in hi]
        if len(lo) != dim or len(hi) != dim:
            raise ConfigError("space.lo/space.hi must match space.dim")
        return MetricSpace(kind, tuple(lo), tuple(hi), d=self["space.d"], c=self["space.c"])

    def measure(self) -> ReferenceMeasure:
        return ReferenceMeasure(self.space(), list(self["measure.boxes"]), list(self["measure.weights"]))

    def eta(self) -> LabelFunction:
        space = self.space()
        fam = self["label.family"]
        mid = (space.lo_array + space.hi_array) / 2
        if fam == "threshold":
            t = self["label.t"]
            return FAMILIES[fam](space, float(mid[0]) if t is None else t)
        if fam == "halfspace":
            w = np.ones(space.dim) if self["label.w"] is None else np.atleast_1d(np.asarray(self["label.w"], dtype=float))
            b = float(w @ mid) if self["label.b"] is None else self["label.b"]
            return FAMILIES[fam](space, w, b)
        if fam == "union-of-balls":
            centers = self["label.centers"] or [mid.tolist()]
            radii = self["label.radii"] or [0.25 * float(min(space.hi_array - space.lo_array))]
            return FAMILIES[fam](space, centers, radii)
        if fam == "checkerboard":
            return FAMILIES[fam](space, self["label.cells"])
        return FAMILIES[fam](space, self["label.depth"], center=tuple(mid.tolist()),
                             side=0.6 * float(min(space.hi_array - space.lo_array)))

    def tail_cd(self) -> tuple[float, int]:
        space = self.space()
        c = self["tail.c"] if self["tail.c"] is not None else space.c
        d = self["tail.d"] if self["tail.d"] is not None else space.d
        return float(c), int(d)

    def indicator_box(self) -> Optional[tuple[np.ndarray, np.ndarray]]:
        lo, hi = self["indicator.lo"], self["indicator.hi"]
        if lo is None and hi is None:
            return None
        if lo is None or hi is None:
            raise ConfigError("indicator.lo and indicator.hi go together")
        dim = self["space.dim"]
        lo = np.full(dim, float(lo)) if _num(lo) else np.asarray(lo, dtype=float)
        hi = np.full(dim, float(hi)) if _num(hi) else np.asarray(hi, dtype=float)
        if lo.shape != (dim,) or hi.shape != (dim,) or np.any(lo >= hi):
            raise ConfigError("indicator box must be nondegenerate with the space's dimension")
        return lo, hi

    def generator(self, trial: int, stream: int = 0):
        from .processes import make_generator

        kind = self["process.class"]
        params = {}
        if kind in ("smoothed", "uniformly-dominated"):
            params = {"sigma": self["process.sigma"], "mode": self["process.mode"], "center": self["process.center"]}
            if kind == "uniformly-dominated":
                params["alpha"] = self["process.alpha"]
        eta = self.eta()
        return make_generator(kind, self.space(), self.measure(), eta, seed=stream_seed(self["seed"], trial, stream), **params)

    def audits(self) -> list[str]:
        a = self["audits"]
        return list(AUDITS) if "all" in a else [x for x in AUDITS if x in a]


_FLOAT_KEYS = {
    "space.c", "label.t", "label.b", "process.sigma", "process.alpha", "tail.delta", "tail.c",
    "azuma.p", "rate.c1", "rate.c2", "ml.safety", "ml.r",
}


def stream_seed(root: int, trial: int, stream: int) -> np.random.SeedSequence:
    """Seed for one (trial, stream) pair: ``SeedSequence(root, spawn_key=(trial, stream))``.

    Streams: 0 = instance process, 1 = audit Monte Carlo.
    """
    return np.random.SeedSequence(entropy=root, spawn_key=(trial, stream))
