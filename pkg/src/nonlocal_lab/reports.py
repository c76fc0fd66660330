"""Verification reports: deterministic JSON plus flat CSV tables."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["VerificationReport", "SCHEMA_VERSION", "to_plain"]

SCHEMA_VERSION = 1


def to_plain(obj):
    """Convert numpy scalars/arrays and complex numbers into JSON-safe data."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_plain(obj.real), to_plain(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


@dataclass
class VerificationReport:
    """Per-experiment record of checked inequalities.

    ``metadata`` holds everything that is allowed to vary between
    identical runs (timestamps, timings); all other fields are
    deterministic given the configuration and seeds.
    """

    experiment: str
    params: dict
    cases: list
    summary: dict
    baseline_metrics: list = field(default_factory=list)
    hard_failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    def to_dict(self, include_metadata=True):
        out = {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "params": to_plain(self.params),
            "cases": to_plain(self.cases),
            "summary": to_plain(self.summary),
            "baseline_metrics": list(self.baseline_metrics),
            "hard_failures": list(self.hard_failures),
        }
        if include_metadata:
            out["metadata"] = to_plain(self.metadata)
        return out

    def to_json(self, include_metadata=True):
        return json.dumps(self.to_dict(include_metadata), indent=2, sort_keys=True)

    def deterministic_json(self):
        return self.to_json(include_metadata=False)

    def baseline_values(self):
        return {k: float(self.summary[k]) for k in self.baseline_metrics if k in self.summary}

    @staticmethod
    def _flatten(case, prefix=""):
        flat = {}
        for k, v in case.items():
            key = f"{prefix}{k}"
            if isinstance(v, dict):
                flat.update(VerificationReport._flatten(v, key + "."))
            elif isinstance(v, (list, tuple)):
                for i, item in enumerate(v):
                    if isinstance(item, (list, tuple, dict)):
                        flat[f"{key}[{i}]"] = json.dumps(to_plain(item))
                    else:
                        flat[f"{key}[{i}]"] = to_plain(item)
            else:
                flat[key] = to_plain(v)
        return flat

    def write_cases_csv(self, path):
        rows = [self._flatten(c) for c in self.cases]
        cols = []
        for r in rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in rows:
                w.writerow(r)

    def write_timings_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "seconds"])
            for stage, seconds in self.timings:
                w.writerow([stage, f"{seconds:.6f}"])

    def write(self, out_dir):
        """Write ``report.json``, ``cases.csv`` and ``timings.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json() + "\n")
        self.write_cases_csv(out / "cases.csv")
        self.write_timings_csv(out / "timings.csv")
        return out
