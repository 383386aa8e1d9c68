"""Experiment reports: aggregation, JSON round trip, CSV export.

Everything except the ``timing`` section is a pure function of the config, so
two runs of the same config serialize to identical bytes once timing is
dropped (see :func:`canonical_json`).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from scipy.stats import beta

SCHEMA_VERSION = 1
ROW_COLUMNS = ("trial_id", "point", "kind", "bit_accuracy", "matched_bits", "detected", "deviation")
SERIES_COLUMNS = ("axis", "point", "kind", "label", "trials", "successes", "detection_rate", "ci_low", "ci_high", "mean_bit_accuracy")
RATE_LABELS = {"benign": "TPR", "plain": "TPR", "forge": "ASR", "informed": "ASR", "null": "FPR"}


class SchemaError(ValueError):
    pass


def clopper_pearson(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    alpha = 1.0 - level
    lo = 0.0 if successes == 0 else float(beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


def aggregate_rows(rows: list[dict]) -> list[dict]:
    """One summary per (point, kind) group, in order of first appearance."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((json.dumps(row["point"]), row["kind"]), []).append(row)
    out = []
    for (_, kind), members in groups.items():
        n = len(members)
        hits = sum(1 for r in members if r["detected"])
        lo, hi = clopper_pearson(hits, n)
        out.append(
            {
                "point": members[0]["point"],
                "kind": kind,
                "label": RATE_LABELS.get(kind, "rate"),
                "trials": n,
                "successes": hits,
                "detection_rate": hits / n,
                "ci_low": lo,
                "ci_high": hi,
                "mean_bit_accuracy": math.fsum(r["bit_accuracy"] for r in members) / n,
                "max_deviation": max(r["deviation"] for r in members),
            }
        )
    return out


@dataclass
class ExperimentReport:
    config_echo: dict
    per_trial: list[dict]
    aggregate: list[dict]
    version: str
    seed_base: int
    axis: str | None = None
    timing: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def group(self, kind: str, point=None) -> dict:
        for g in self.aggregate:
            if g["kind"] == kind and g["point"] == point:
                return g
        raise KeyError(f"no aggregate for kind={kind!r}, point={point!r}")

    def deterministic_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "version": self.version,
            "seed_base": self.seed_base,
            "axis": self.axis,
            "config_echo": self.config_echo,
            "aggregate": self.aggregate,
            "per_trial": self.per_trial,
        }

    def to_dict(self) -> dict:
        out = self.deterministic_dict()
        out["timing"] = self.timing
        return out


def canonical_json(report: ExperimentReport) -> str:
    """Serialization of the deterministic part (timing excluded)."""
    return json.dumps(report.deterministic_dict(), sort_keys=True, indent=1) + "\n"


def report_digest(report: ExperimentReport) -> str:
    return hashlib.sha256(canonical_json(report).encode()).hexdigest()


def save_report(path, report: ExperimentReport) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")


def load_report(path) -> ExperimentReport:
    data = json.loads(Path(path).read_text())
    got = data.get("schema_version")
    if got != SCHEMA_VERSION:
        raise SchemaError(f"{path}: schema version {got!r}, expected {SCHEMA_VERSION}")
    return ExperimentReport(
        config_echo=data["config_echo"],
        per_trial=data["per_trial"],
        aggregate=data["aggregate"],
        version=data["version"],
        seed_base=data["seed_base"],
        axis=data.get("axis"),
        timing=data.get("timing", {}),
        schema_version=got,
    )


def write_rows_csv(path, report: ExperimentReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in report.per_trial:
            w.writerow({**row, "point": "" if row["point"] is None else row["point"]})


def write_series_csv(path, reports: list[ExperimentReport], axis: str | None = None) -> None:
    """Aggregates of one or more reports as a single series."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SERIES_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for rep in reports:
            for g in rep.aggregate:
                point = g["point"]
                if point is None and axis is not None:
                    point = rep.config_echo.get(axis)
                w.writerow({**g, "axis": axis or rep.axis or "", "point": "" if point is None else point})
