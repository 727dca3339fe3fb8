"""Hard majority vote over the Local, DP-Fed and KD-SMOTE predictions."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ProtocolError
from .metrics import DeviceResult, MethodReport

MEMBERS = ("local", "dpfed", "kd_smote")


def majority_vote(votes: Sequence[int]) -> int:
    votes = list(votes)
    if len(votes) != 3 or any(v not in (0, 1) for v in votes):
        raise ProtocolError(f"need exactly three binary votes, got {votes}")
    return int(sum(votes) >= 2)


def vote_arrays(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((np.asarray(a) + np.asarray(b) + np.asarray(c)) >= 2).astype(np.int64)


def run_ensemble(reports: Sequence[MethodReport], method: str = "ensemble") -> MethodReport:
    reports = list(reports)
    if len(reports) != 3:
        raise ProtocolError(f"ensemble needs three reports, got {len(reports)}")
    maps = [r.by_id() for r in reports]
    ids = sorted(maps[0])
    if any(sorted(m) != ids for m in maps[1:]):
        raise ProtocolError("ensemble members cover different devices")
    out = []
    for dev_id in ids:
        members = [m[dev_id] for m in maps]
        labels = members[0].labels
        for other in members[1:]:
            if not np.array_equal(other.labels, labels):
                raise ProtocolError(f"{dev_id}: members disagree on test frames")
        out.append(DeviceResult(dev_id, vote_arrays(*(m.predictions for m in members)), labels,
                                any(m.fallback for m in members)))
    notes = {"members": [r.method for r in reports], "vote": "hard majority of three"}
    return MethodReport(method, out, reports[0].config_fingerprint, reports[0].seed, notes)
