"""Structured run reports and tabular curve output.

The JSON report is deterministic: keys are sorted, floats round-trip exactly
through repr, and volatile fields (wall time, thread count) are never written
into it -- identical config and seed give byte-identical files.  Curves go to
CSV with a header row, comma separators and '.' decimals.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "1"

__all__ = ["RunReport", "write_report", "read_report", "write_csv", "SCHEMA_VERSION"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return {"__nonfinite__": repr(obj)}
    return obj


@dataclass
class RunReport:
    """Everything needed to reproduce and interpret one CLI run."""

    command: str
    config: dict
    seed: int
    results: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)   # name -> (header tuple, rows array)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return _jsonable({
            "schema_version": self.schema_version,
            "command": self.command,
            "seed": self.seed,
            "config": self.config,
            "results": self.results,
            "curve_files": sorted(self.curves),
        })


def write_csv(path: str, header, rows) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_report(report: RunReport, out_dir: str) -> list[str]:
    """Write report.json plus one CSV per curve; returns the file paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in sorted(report.curves):
        header, rows = report.curves[name]
        path = os.path.join(out_dir, f"{name}.csv")
        try:
            write_csv(path, header, rows)
        except OSError as e:
            raise OSError(f"failed writing curve {name!r} to {path}: {e}") from e
        written.append(path)
    path = os.path.join(out_dir, "report.json")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
    except OSError as e:
        raise OSError(f"failed writing report to {path}: {e}") from e
    written.append(path)
    return written


def read_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
