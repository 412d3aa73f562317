"""Run results: accuracy matrix, label budget, and JSON round-tripping.

A report is reproducible evidence: for a fixed config and seed the
canonical serialization is byte-identical across runs. Wall-clock time
is carried for the reader but excluded from the canonical form and from
equality, since it can never reproduce.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import DataError

SCHEMA_VERSION = 1


@dataclass
class RunReport:
    config: dict
    accuracy: list[list[float]]
    final_avg: float
    oracle_calls: int
    label_fraction: float
    steps: int
    missing_classes: list[int] = field(default_factory=list)
    head_accuracy: list[float] | None = None
    loss_trace: list[float] | None = None
    wall_clock: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not self.accuracy:
            raise ValueError("a report needs at least one accuracy row")
        last = self.accuracy[-1]
        if abs(self.final_avg - sum(last) / len(last)) > 1e-12:
            raise ValueError("final_avg must be the mean of the last row")
        if not 0.0 <= self.label_fraction <= 1.0:
            raise ValueError(f"label fraction out of range: {self.label_fraction}")


def as_dict(report: RunReport, *, wall_clock: bool = True) -> dict:
    out = {"schema": SCHEMA_VERSION}
    for f in fields(RunReport):
        if f.name == "wall_clock" and not wall_clock:
            continue
        out[f.name] = getattr(report, f.name)
    return out


def canonical_json(report: RunReport) -> str:
    """Deterministic serialization: sorted keys, no whitespace, no timing."""
    return json.dumps(as_dict(report, wall_clock=False),
                      sort_keys=True, separators=(",", ":"))


def to_json(report: RunReport) -> str:
    return json.dumps(as_dict(report), sort_keys=True, separators=(",", ":"))


def from_json(text: str) -> RunReport:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"malformed report JSON: {e}") from None
    version = raw.pop("schema", None)
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported report schema: {version!r}")
    names = {f.name for f in fields(RunReport)}
    unknown = set(raw) - names
    if unknown:
        raise DataError(f"unknown report fields: {sorted(unknown)}")
    try:
        return RunReport(**raw)
    except TypeError as e:
        raise DataError(f"incomplete report: {e}") from None


def write_reports(path, reports: list[RunReport]) -> None:
    """One JSON object per line."""
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(to_json(rep) + "\n")


def read_reports(path) -> list[RunReport]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(from_json(line))
    return out
