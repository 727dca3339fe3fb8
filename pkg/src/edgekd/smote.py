"""Whole-dataset synthesis with SMOTE.

Each device replaces its training set with synthetic rows before anything
is sent to the cloud.  Generation is stratified by class: a seed row ``v``
is drawn from one class, ``w`` is one of its ``k`` nearest same-class
neighbours, and the new row is

    z = v + r * (v - w)          (mode "as-written", the default)
    z = v + r * (w - v)          (mode "standard", classic interpolation)

with ``r ~ U[0, 1]``.  The default extrapolates away from the neighbour;
classic SMOTE interpolates towards it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError

MODES = ("as-written", "standard")


@dataclass(frozen=True)
class SmoteConfig:
    k: int = 5
    samples_per_class: int | str = "match-real"
    mode: str = "as-written"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ConfigError(f"SMOTE mode must be one of {MODES}, got {self.mode!r}")
        spc = self.samples_per_class
        if spc != "match-real" and not (isinstance(spc, int) and spc > 0):
            raise ConfigError(f"samples_per_class must be 'match-real' or a positive int, got {spc!r}")


@dataclass(frozen=True)
class SmoteResult:
    """Synthetic rows plus the provenance of each: seed row, neighbour row, ``r``.

    ``seed_index`` and ``neighbor_index`` index into the real training rows
    the data was generated from.
    """

    x: np.ndarray
    y: np.ndarray
    seed_index: np.ndarray
    neighbor_index: np.ndarray
    r: np.ndarray
    mode: str


def _distance_matrix(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def k_nearest_neighbors(points, query_index: int, k: int) -> np.ndarray:
    """Indices of the ``k`` points nearest to ``points[query_index]``, itself excluded.

    Sorted by ascending Euclidean distance; equal distances resolve to the
    smaller index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k >= n:
        raise DataError(f"need more than k={k} points, got {n}")
    d = np.sqrt(np.sum((points - points[query_index]) ** 2, axis=1))
    d[query_index] = np.inf
    return np.argsort(d, kind="stable")[:k]


def neighbor_table(points: np.ndarray, k: int) -> np.ndarray:
    """``(n, k)`` table whose row ``i`` equals ``k_nearest_neighbors(points, i, k)``."""
    n = points.shape[0]
    if k >= n:
        raise DataError(f"need more than k={k} points, got {n}")
    table = np.empty((n, k), dtype=np.int64)
    # chunked to bound the n x chunk distance block
    chunk = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        diff = points[start:stop, None, :] - points[None, :, :]
        d = np.sqrt(np.sum(diff * diff, axis=-1))
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        table[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return table


def generate_sample(v, w, r: float, mode: str = "as-written") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if v.shape != w.shape:
        raise ShapeError(f"seed {v.shape} and neighbour {w.shape} differ in shape")
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"r must lie in [0, 1], got {r}")
    if mode == "as-written":
        return v + r * (v - w)
    if mode == "standard":
        return v + r * (w - v)
    raise ConfigError(f"SMOTE mode must be one of {MODES}, got {mode!r}")


def generate_synthetic_dataset(x, y, cfg: SmoteConfig, rng: np.random.Generator,
                               device_id: str = "?") -> SmoteResult:
    """Replace ``(x, y)`` by SMOTE rows with the configured per-class counts."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} rows but {y.shape[0]} labels")
    xs, ys, vs, ws, rs = [], [], [], [], []
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        if members.size <= cfg.k:
            raise DataError(
                f"device {device_id}: class {cls} has {members.size} rows, SMOTE with k={cfg.k} needs more than {cfg.k}"
            )
        count = members.size if cfg.samples_per_class == "match-real" else int(cfg.samples_per_class)
        pts = x[members]
        table = neighbor_table(pts, cfg.k)
        seeds = rng.integers(0, members.size, size=count)
        picks = rng.integers(0, cfg.k, size=count)
        r = rng.uniform(0.0, 1.0, size=count)
        nbrs = table[seeds, picks]
        v, w = pts[seeds], pts[nbrs]
        z = v + r[:, None] * ((v - w) if cfg.mode == "as-written" else (w - v))
        xs.append(z)
        ys.append(np.full(count, cls, dtype=np.int64))
        vs.append(members[seeds])
        ws.append(members[nbrs])
        rs.append(r)
    return SmoteResult(np.vstack(xs), np.concatenate(ys), np.concatenate(vs), np.concatenate(ws),
                       np.concatenate(rs), cfg.mode)


def recover_r(z, v, w, mode: str = "as-written") -> tuple[float, float]:
    """Solve the generating equation for ``r`` coordinate by coordinate.

    Returns ``(mean r, spread)`` over the coordinates where ``v != w``;
    spread is ``max - min`` of the per-coordinate solutions.
    """
    z, v, w = (np.asarray(a, dtype=np.float64) for a in (z, v, w))
    step = (v - w) if mode == "as-written" else (w - v)
    mask = step != 0
    if not mask.any():
        return 0.0, float(np.max(np.abs(z - v)))
    r = (z[mask] - v[mask]) / step[mask]
    return float(r.mean()), float(r.max() - r.min())
