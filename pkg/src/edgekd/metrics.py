"""Per-method reports and the evaluation views built on them.

* edge accuracy: unweighted mean of per-device test accuracies
* frame accuracy: correct test frames over all test frames, pooled
* accuracy-delta table: devices bucketed by (method - Local) accuracy in
  percentage points
* error-rate groups: devices grouped by their frame error rate, mean edge
  accuracy per group and method
"""
from __future__ import annotations

import bisect
import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigError, ProtocolError

REPORT_SCHEMA = "edgekd-report/1"

DELTA_EDGES = (-25, -15, -5, 5, 15, 25)
DELTA_LABELS = ("<-25", "[-25,-15)", "[-15,-5)", "[-5,5)", "[5,15)", "[15,25)", ">=25")
BOUNDARY_CONVENTION = "half-open intervals, lower bound inclusive"


@dataclass
class DeviceResult:
    device_id: str
    predictions: np.ndarray
    labels: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.predictions.shape != self.labels.shape:
            raise ProtocolError(f"{self.device_id}: {self.predictions.size} predictions for {self.labels.size} labels")

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def correct(self) -> int:
        return int(np.sum(self.predictions == self.labels))

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass
class MethodReport:
    method: str
    devices: list[DeviceResult]
    config_fingerprint: str = ""
    seed: int = 0
    notes: dict = field(default_factory=dict)

    def by_id(self) -> dict[str, DeviceResult]:
        return {d.device_id: d for d in self.devices}

    @property
    def fallback_devices(self) -> list[str]:
        return [d.device_id for d in self.devices if d.fallback]


def _nonempty(report: MethodReport) -> None:
    if not report.devices:
        raise ProtocolError(f"report {report.method!r} has no devices")


def edge_accuracy(report: MethodReport) -> float:
    _nonempty(report)
    # fixed summation order keeps the value independent of device ordering
    return float(np.mean([d.accuracy for d in sorted(report.devices, key=lambda d: d.device_id)]))


def frame_accuracy(report: MethodReport) -> float:
    _nonempty(report)
    total = sum(d.n for d in report.devices)
    if total == 0:
        raise ProtocolError(f"report {report.method!r} has no test frames")
    return sum(d.correct for d in report.devices) / total


def _aligned(report: MethodReport, reference: MethodReport) -> list[tuple[DeviceResult, DeviceResult]]:
    a, b = report.by_id(), reference.by_id()
    if set(a) != set(b):
        raise ProtocolError(f"reports {report.method!r} and {reference.method!r} cover different devices")
    pairs = []
    for dev_id in sorted(a):
        if a[dev_id].n != b[dev_id].n:
            raise ProtocolError(f"{dev_id}: test sets of different size")
        pairs.append((a[dev_id], b[dev_id]))
    return pairs


def accuracy_delta(method: DeviceResult, local: DeviceResult) -> Fraction:
    """Accuracy difference in percentage points, exact."""
    return Fraction(100 * (method.correct - local.correct), method.n)


def delta_bucket(delta) -> int:
    return bisect.bisect_right(DELTA_EDGES, delta)


def accuracy_delta_table(method_report: MethodReport, local_report: MethodReport) -> dict[str, int]:
    """Device counts per delta bucket; buckets are half-open, lower bound inclusive."""
    counts = [0] * len(DELTA_LABELS)
    for m, l in _aligned(method_report, local_report):
        counts[delta_bucket(accuracy_delta(m, l))] += 1
    return dict(zip(DELTA_LABELS, counts))


@dataclass
class ErrorRateGroup:
    index: int
    lower: float
    upper: float
    device_ids: list[str]
    edge_accuracy: dict[str, float]

    @property
    def node_count(self) -> int:
        return len(self.device_ids)


def assign_groups(rates: dict[str, float], grouping: str | Sequence[float] = "quartile") -> list[list[str]]:
    """Device ids per group.

    ``"quartile"`` sorts devices by error rate (ties by id) and cuts them into
    four groups of equal size (sizes differ by at most one).  A sequence of
    edges ``e1 < e2 < ...`` makes ``len(edges)+1`` groups where a device with
    rate ``r`` lands in group ``#{e : e <= r}``.
    """
    ordered = sorted(rates, key=lambda d: (rates[d], d))
    if isinstance(grouping, str):
        if grouping != "quartile":
            raise ConfigError(f"unknown grouping {grouping!r}")
        return [list(part) for part in np.array_split(np.array(ordered, dtype=object), 4)]
    edges = list(grouping)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"group edges must increase strictly, got {edges}")
    groups: list[list[str]] = [[] for _ in range(len(edges) + 1)]
    for dev_id in ordered:
        groups[bisect.bisect_right(edges, rates[dev_id])].append(dev_id)
    return groups


def error_rate_groups(scenario, reports: Sequence[MethodReport],
                      grouping: str | Sequence[float] = "quartile") -> list[ErrorRateGroup]:
    """Mean edge accuracy per method inside each frame-error-rate group.

    ``scenario`` is a :class:`~edgekd.dataio.Scenario` or a mapping from
    device id to frame error rate.
    """
    if hasattr(scenario, "devices"):
        rates = {d.device_id: d.frame_error_rate for d in scenario.devices}
    else:
        rates = dict(scenario)
    groups = assign_groups(rates, grouping)
    edges = None if isinstance(grouping, str) else list(grouping)
    out = []
    for gi, ids in enumerate(groups):
        if edges is None:
            lo = rates[ids[0]] if ids else float("nan")
            hi = rates[ids[-1]] if ids else float("nan")
        else:
            lo = edges[gi - 1] if gi else float("-inf")
            hi = edges[gi] if gi < len(edges) else float("inf")
        acc = {}
        for rep in reports:
            by_id = rep.by_id()
            acc[rep.method] = float(np.mean([by_id[i].accuracy for i in ids])) if ids else float("nan")
        out.append(ErrorRateGroup(gi, float(lo), float(hi), list(ids), acc))
    return out


# -- serialization -------------------------------------------------------------


def report_to_dict(report: MethodReport, include_predictions: bool = True) -> dict:
    devices = []
    for d in sorted(report.devices, key=lambda d: d.device_id):
        entry = {"device_id": d.device_id, "n_test": d.n, "correct": d.correct,
                 "accuracy": d.accuracy, "fallback": d.fallback}
        if include_predictions:
            entry["predictions"] = "".join(map(str, d.predictions.tolist()))
            entry["labels"] = "".join(map(str, d.labels.tolist()))
        devices.append(entry)
    return {
        "method": report.method,
        "config_fingerprint": report.config_fingerprint,
        "seed": report.seed,
        "edge_accuracy": edge_accuracy(report),
        "frame_accuracy": frame_accuracy(report),
        "fallback_devices": sorted(report.fallback_devices),
        "notes": report.notes,
        "devices": devices,
    }


def report_from_dict(d: dict) -> MethodReport:
    devices = [
        DeviceResult(e["device_id"], np.array([int(c) for c in e["predictions"]], dtype=np.int64),
                     np.array([int(c) for c in e["labels"]], dtype=np.int64), e["fallback"])
        for e in d["devices"]
    ]
    return MethodReport(d["method"], devices, d["config_fingerprint"], d["seed"], d.get("notes", {}))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


CSV_COLUMNS = ("method", "device_id", "n_test", "correct", "accuracy", "fallback",
               "frame_error_rate", "config_fingerprint", "seed")


def emit_report(reports: Sequence[MethodReport], stats=None, fmt: str = "json") -> str:
    """Serialize reports; output depends only on the inputs (stable ordering)."""
    rates = {d.device_id: d.frame_error_rate for d in stats.devices} if stats is not None else {}
    if fmt == "json":
        doc = {
            "schema": REPORT_SCHEMA,
            "conventions": {"delta_buckets": BOUNDARY_CONVENTION, "delta_units": "percentage points",
                            "edge_accuracy": "unweighted mean over devices",
                            "frame_accuracy": "pooled over all test frames"},
            "stats": stats.to_dict() if stats is not None else None,
            "methods": [report_to_dict(r) for r in reports],
        }
        return dumps(doc)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in reports:
            for d in sorted(r.devices, key=lambda d: d.device_id):
                rate = rates.get(d.device_id)
                writer.writerow([r.method, d.device_id, d.n, d.correct, repr(d.accuracy), int(d.fallback),
                                 "" if rate is None else repr(rate), r.config_fingerprint, r.seed])
        return buf.getvalue()
    raise ConfigError(f"report format must be json or csv, got {fmt!r}")


def summary_table(reports: Sequence[MethodReport]) -> list[dict]:
    return [{"method": r.method, "edge_accuracy": edge_accuracy(r), "frame_accuracy": frame_accuracy(r),
             "devices": len(r.devices), "fallback_devices": len(r.fallback_devices)} for r in reports]


def delta_tables(reports: Sequence[MethodReport], local: MethodReport) -> list[dict]:
    return [{"method": r.method, "buckets": accuracy_delta_table(r, local)} for r in reports if r.method != local.method]


def groups_to_rows(groups: Sequence[ErrorRateGroup]) -> list[dict]:
    def clean(v):
        return None if isinstance(v, float) and not np.isfinite(v) else v

    return [{"group": g.index, "lower": clean(g.lower), "upper": clean(g.upper), "node_count": g.node_count,
             "device_ids": g.device_ids, "edge_accuracy": {k: clean(v) for k, v in g.edge_accuracy.items()}}
            for g in groups]


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return buf.getvalue()
