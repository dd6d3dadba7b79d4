"""Scenario reports: assertions with measured values, CSV tables and plot data."""

import csv
import json
import math
import os
from dataclasses import dataclass, field

from ..errors import ReportError

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


def clean(obj):
    """JSON-safe copy: non-finite floats become None, numpy scalars plain numbers."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


@dataclass
class Assertion:
    """Machine-checkable statement ``measured <relation> threshold`` tied to an acceptance criterion."""

    name: str
    criterion: int
    measured: object
    threshold: object
    relation: str
    passed: bool

    @classmethod
    def check(cls, name, criterion, measured, relation, threshold):
        ops = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
               ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
               "==": lambda a, b: a == b}
        if relation not in ops:
            raise ValueError(f"unknown relation {relation!r}")
        ok = measured is not None and bool(ops[relation](measured, threshold))
        return cls(name, criterion, measured, threshold, relation, ok)

    def as_dict(self) -> dict:
        return {"name": self.name, "criterion": self.criterion, "measured": self.measured,
                "relation": self.relation, "threshold": self.threshold, "passed": self.passed}


@dataclass
class Report:
    scenario: str
    config: dict
    assertions: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    plotdata: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    inconclusive: bool = False

    def add(self, name, criterion, measured, relation, threshold) -> Assertion:
        a = Assertion.check(name, criterion, measured, relation, threshold)
        self.assertions.append(a)
        return a

    @property
    def status(self) -> str:
        if any(not a.passed for a in self.assertions):
            return FAIL
        return INCONCLUSIVE if self.inconclusive else PASS

    @property
    def exit_code(self) -> int:
        return 1 if self.status == FAIL else 0

    def summary(self) -> dict:
        return clean({"scenario": self.scenario, "status": self.status, "config": self.config,
                      "assertions": [a.as_dict() for a in self.assertions],
                      "results": self.results, "notes": self.notes,
                      "tables": {k: len(rows) for k, (_, rows) in self.tables.items()}})

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True)


def emit_report(report: Report, out_dir, plots: bool = True) -> int:
    """Write ``summary.json``, one CSV per table and ``plotdata/*.json``; return the exit status."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            fh.write(report.summary_json() + "\n")
        for name, (header, rows) in report.tables.items():
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(header)
                for row in rows:
                    wr.writerow([repr(v) if isinstance(v, float) else v for v in row])
        if plots and report.plotdata:
            pdir = os.path.join(out_dir, "plotdata")
            os.makedirs(pdir, exist_ok=True)
            for name, data in report.plotdata.items():
                with open(os.path.join(pdir, f"{name}.json"), "w") as fh:
                    json.dump(clean(data), fh, indent=1, sort_keys=True)
    except OSError as exc:
        raise ReportError(f"cannot write report to {out_dir}: {exc}") from None
    return report.exit_code
