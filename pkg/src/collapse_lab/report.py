"""Deterministic run reports and CSV emission.

Outputs are byte-reproducible for a fixed configuration and seed: JSON is
written with sorted keys and a trailing newline, CSV cells hold shortest
round-trip decimals, and nothing time- or host-dependent enters the files
(wall-clock duration is kept on the in-memory report for console display
only).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Check", "RunReport", "write_csv", "emit_report"]


@dataclass(frozen=True)
class Check:
    """One named verification: a measured value against its expectation."""

    name: str
    measured: object
    expected: str
    passed: bool


@dataclass
class RunReport:
    kind: str
    config: dict
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    duration_s: float = 0.0  # console only, never serialized

    @property
    def overall_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def add_check(self, name, measured, expected, passed) -> "Check":
        c = Check(name, measured, expected, bool(passed))
        self.checks.append(c)
        return c

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": self.kind,
            "config": _jsonify(self.config),
            "checks": [
                {
                    "name": c.name,
                    "measured": _jsonify(c.measured),
                    "expected": c.expected,
                    "passed": c.passed,
                }
                for c in self.checks
            ],
            "summary": _jsonify(self.summary),
            "overall_pass": self.overall_pass,
            "artifacts": sorted(self.artifacts),
        }


def _jsonify(v):
    """Convert numpy scalars/arrays into plain JSON-serializable values."""
    if isinstance(v, dict):
        return {str(k): _jsonify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonify(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonify(x) for x in v.tolist()]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _fmt_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip decimal
    return str(v)


def write_csv(path, header, rows):
    """Write a CSV with a header row, LF endings, round-trip floats."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt_cell(v) for v in row) + "\n")


def emit_report(report: RunReport, out_dir, tables=None):
    """Write report.json plus the given CSV tables into ``out_dir``.

    ``tables`` maps file names to (header, rows).  Returns the list of
    files written.  Rerunning with identical inputs overwrites the files
    with identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, (header, rows) in (tables or {}).items():
        path = os.path.join(out_dir, name)
        write_csv(path, header, rows)
        written.append(name)
        if name not in report.artifacts:
            report.artifacts.append(name)
    payload = json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(payload)
    written.append("report.json")
    return written
