"""Experiment records and their CSV/JSON persistence."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class Check:
    """One pass/fail decision and the configured tolerance it used."""

    name: str
    value: float
    reference: float
    tolerance: float
    tolerance_key: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentRecord:
    kind: str
    config_hash: str
    seed: int
    config_text: str
    points: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    partial: bool = False
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.partial and all(c.passed for c in self.checks)

    def to_dict(self, wall_clock: bool = True) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        if not wall_clock:
            d.pop("wall_clock")
        return clean(d)

    def to_json(self, wall_clock: bool = True) -> str:
        return json.dumps(self.to_dict(wall_clock), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        d = dict(d)
        d.pop("passed", None)
        d["checks"] = [Check(**c) for c in d.get("checks", [])]
        return cls(**d)


def clean(obj):
    """Recursively convert numpy scalars and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_record(record: ExperimentRecord, out_dir: str, prefix: str = "") -> tuple[str, str | None]:
    """Write ``<prefix><kind>.json`` and, when there are points, ``<prefix><kind>.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, f"{prefix}{record.kind}")
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        fh.write(record.to_json())
    csv_path = None
    if record.points:
        csv_path = stem + ".csv"
        write_csv(record.points, csv_path)
    return stem + ".json", csv_path


def write_csv(rows, path):
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: _cell(r.get(k)) for k in cols})


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return "" if x is None else x


def read_record(path) -> ExperimentRecord:
    with open(path, encoding="utf-8") as fh:
        return ExperimentRecord.from_dict(json.load(fh))
