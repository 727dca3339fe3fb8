"""Per-node telemetry ingestion, train/test partitions and synthetic scenarios.

A :class:`Scenario` is the unit every method consumes: one
:class:`DeviceDataset` per edge node, features z-scored with statistics
fitted on the pooled training rows only.  Real data comes from a directory
of per-node CSV files described by a JSON schema config; desk-scale data
comes from :func:`generate_synthetic_scenario`.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, SchemaError
from .rng import stream

log = logging.getLogger(__name__)

SCENARIO_TAGS = ("scr4", "scr5", "synthetic")
SPLIT_MODES = ("chronological", "random")
ROLES = ("feature", "label", "ignore")


@dataclass(frozen=True)
class Split:
    x: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


@dataclass(frozen=True)
class DeviceDataset:
    device_id: str
    scenario: str
    train: Split
    test: Split
    frame_error_rate: float

    @property
    def n_frames(self) -> int:
        return self.train.n + self.test.n


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass(frozen=True)
class Scenario:
    tag: str
    devices: tuple[DeviceDataset, ...]
    feature_names: tuple[str, ...]
    normalization: Normalization
    notes: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def device_index(self, device_id: str) -> int:
        for i, d in enumerate(self.devices):
            if d.device_id == device_id:
                return i
        raise KeyError(device_id)


def split_sizes(n: int) -> tuple[int, int]:
    """Train/test sizes for ``n`` frames: half each, the odd frame goes to train."""
    n_train = (n + 1) // 2
    return n_train, n - n_train


def _split_index(n: int, mode: str, seed: int, device: int) -> tuple[np.ndarray, np.ndarray]:
    n_train, _ = split_sizes(n)
    if mode == "chronological":
        order = np.arange(n)
    elif mode == "random":
        order = stream(seed, "split", device).permutation(n)
    else:
        raise ConfigError(f"split mode must be one of {SPLIT_MODES}, got {mode!r}")
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def _check_binary(y: np.ndarray, where: str) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype == bool:
        return y.astype(np.int64)
    if not np.all((y == 0) | (y == 1)):
        bad = pd.unique(y[(y != 0) & (y != 1)])[:5]
        raise DataError(f"{where}: label must be 0/1, found {list(bad)}")
    return y.astype(np.int64)


def build_scenario(raw: Sequence[tuple[str, np.ndarray, np.ndarray]], tag: str,
                   feature_names: Sequence[str], split: str = "chronological",
                   split_seed: int = 0, notes: dict | None = None) -> Scenario:
    """Split, normalize and package raw per-device ``(device_id, x, y)`` triples.

    Normalization is fitted on the union of training rows only.  Features
    with zero spread there are dropped (with a warning) since they cannot be
    z-scored.
    """
    if tag not in SCENARIO_TAGS:
        raise ConfigError(f"scenario tag must be one of {SCENARIO_TAGS}, got {tag!r}")
    if not raw:
        raise DataError("scenario has no devices")
    raw = sorted(raw, key=lambda r: r[0])
    ids = [r[0] for r in raw]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate device ids")
    names = list(feature_names)
    parts = []
    for i, (dev_id, x, y) in enumerate(raw):
        x = np.asarray(x, dtype=np.float64)
        y = _check_binary(y, dev_id)
        if x.ndim != 2 or x.shape[1] != len(names) or x.shape[0] != y.shape[0]:
            raise DataError(f"{dev_id}: features {x.shape} do not match {len(names)} names / {y.shape[0]} labels")
        tr, te = _split_index(len(y), split, split_seed, i)
        parts.append((dev_id, x[tr], y[tr], x[te], y[te], float(y.mean()) if len(y) else 0.0))

    pooled = np.vstack([p[1] for p in parts])
    mean, std = pooled.mean(axis=0), pooled.std(axis=0)
    keep = std > 0
    dropped = [n for n, k in zip(names, keep) if not k]
    if dropped:
        log.warning("dropping constant features %s", dropped)
    norm = Normalization(mean[keep], std[keep])
    devices = tuple(
        DeviceDataset(
            dev_id, tag,
            Split(norm.apply(xtr[:, keep]), ytr),
            Split(norm.apply(xte[:, keep]), yte),
            rate,
        )
        for dev_id, xtr, ytr, xte, yte, rate in parts
    )
    meta = dict(notes or {})
    meta.update(split=split, split_seed=split_seed, normalization="z-score on pooled train rows",
                dropped_features=dropped)
    return Scenario(tag, devices, tuple(n for n, k in zip(names, keep) if k), norm, meta)


# -- CSV ingestion ---------------------------------------------------------------


@dataclass
class SchemaConfig:
    """Column roles for per-node CSV files.

    ``columns`` maps a column name to ``feature``, ``label`` or ``ignore``;
    columns absent from the map are ignored.  ``categorical`` marks feature
    columns holding codes (e.g. the modulation and coding scheme) and picks
    ``integer`` (one numeric column) or ``onehot`` encoding.
    """

    columns: dict[str, str]
    scenario: str = "scr4"
    pattern: str = "*.csv"
    split: str = "chronological"
    split_seed: int = 0
    categorical: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        bad = {c: r for c, r in self.columns.items() if r not in ROLES}
        if bad:
            raise ConfigError(f"unknown column roles {bad}; expected {ROLES}")
        if len(self.label_columns) != 1:
            raise ConfigError(f"schema needs exactly one label column, got {self.label_columns}")
        if not self.feature_columns:
            raise ConfigError("schema names no feature columns")
        for col, enc in self.categorical.items():
            if col not in self.feature_columns:
                raise ConfigError(f"categorical column {col!r} is not a feature")
            if enc not in ("integer", "onehot"):
                raise ConfigError(f"categorical encoding must be integer or onehot, got {enc!r}")
        if self.split not in SPLIT_MODES:
            raise ConfigError(f"split mode must be one of {SPLIT_MODES}, got {self.split!r}")

    @property
    def feature_columns(self) -> list[str]:
        return [c for c, r in self.columns.items() if r == "feature"]

    @property
    def label_columns(self) -> list[str]:
        return [c for c, r in self.columns.items() if r == "label"]

    @classmethod
    def from_file(cls, path) -> "SchemaConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def _read_node(path: Path, schema: SchemaConfig) -> pd.DataFrame | None:
    frame = pd.read_csv(path, encoding="utf-8")
    if frame.empty:
        log.warning("skipping empty node file %s", path.name)
        return None
    needed = schema.feature_columns + schema.label_columns
    for col in needed:
        if col not in frame.columns:
            raise SchemaError(f"{path.name}: missing column {col!r}")
    return frame[needed]


def load_scenario(root, schema: SchemaConfig | dict | str | Path, threads: int = 1) -> Scenario:
    """Load one scenario from a directory holding one CSV per node."""
    if not isinstance(schema, SchemaConfig):
        schema = SchemaConfig(**schema) if isinstance(schema, dict) else SchemaConfig.from_file(schema)
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"scenario directory {root} does not exist")
    files = sorted(root.glob(schema.pattern))
    if not files:
        raise DataError(f"no files matching {schema.pattern!r} in {root}")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            frames = list(pool.map(lambda p: _read_node(p, schema), files))
    else:
        frames = [_read_node(p, schema) for p in files]
    # device order is sorted id order, the same order build_scenario uses
    nodes = sorted(((p.stem, f) for p, f in zip(files, frames) if f is not None), key=lambda n: n[0])
    if not nodes:
        raise DataError(f"every node file in {root} is empty")

    label = schema.label_columns[0]
    numeric = [c for c in schema.feature_columns if c not in schema.categorical]
    splits = {}
    for i, (dev_id, frame) in enumerate(nodes):
        tr, te = _split_index(len(frame), schema.split, schema.split_seed, i)
        splits[dev_id] = (tr, te)

    # category vocabularies come from training rows only
    vocab = {}
    for col in schema.categorical:
        values = pd.concat([f[col].iloc[splits[d][0]] for d, f in nodes])
        vocab[col] = sorted(pd.unique(values.dropna()), key=lambda v: (str(type(v)), v))

    names = []
    for col in schema.feature_columns:
        if schema.categorical.get(col) == "onehot":
            names += [f"{col}={v}" for v in vocab[col]]
        else:
            names.append(col)

    raw = []
    for dev_id, frame in nodes:
        cols = []
        for col in schema.feature_columns:
            enc = schema.categorical.get(col)
            if enc is None:
                vals = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=np.float64)
                if np.isnan(vals).any():
                    raise DataError(f"{dev_id}: non-numeric or missing values in {col!r}")
                cols.append(vals[:, None])
            elif enc == "integer":
                codes = {v: i for i, v in enumerate(vocab[col])}
                cols.append(np.array([codes.get(v, -1) for v in frame[col]], dtype=np.float64)[:, None])
            else:
                cols.append(np.stack([(frame[col] == v).to_numpy(dtype=np.float64) for v in vocab[col]], axis=1))
        x = np.hstack(cols)
        y = pd.to_numeric(frame[label], errors="coerce").to_numpy()
        if np.isnan(y.astype(np.float64)).any():
            raise DataError(f"{dev_id}: non-numeric label values")
        raw.append((dev_id, x, y))

    notes = {"source": str(root), "numeric_columns": numeric, "categorical": dict(schema.categorical)}
    # build_scenario recomputes the same split from (mode, seed, device index)
    return build_scenario(raw, schema.scenario, names, schema.split, schema.split_seed, notes)


# -- stats -------------------------------------------------------------------------


@dataclass
class DeviceStats:
    device_id: str
    frames: int
    error_frames: int
    frame_error_rate: float


@dataclass
class ScenarioStats:
    tag: str
    device_count: int
    total_frames: int
    error_frames: int
    aggregate_frame_error_rate: float
    devices: list[DeviceStats]

    def to_dict(self) -> dict:
        return asdict(self)


def dataset_stats(scenario: Scenario) -> ScenarioStats:
    per = []
    for d in scenario.devices:
        errors = int(d.train.y.sum() + d.test.y.sum())
        per.append(DeviceStats(d.device_id, d.n_frames, errors, errors / d.n_frames if d.n_frames else 0.0))
    total = sum(p.frames for p in per)
    errors = sum(p.error_frames for p in per)
    return ScenarioStats(scenario.tag, len(per), total, errors, errors / total if total else 0.0, per)


def combined_error_rate(stats: Sequence[ScenarioStats]) -> float:
    total = sum(s.total_frames for s in stats)
    return sum(s.error_frames for s in stats) / total if total else 0.0


# -- synthetic scenarios ------------------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Knobs for a desk-scale stand-in for the per-node telemetry.

    Features of device ``d`` come from a Gaussian mixture whose component
    centres are shared by all devices and shifted by a per-device offset of
    size ``shift``.  Labels follow a logistic ground truth of the features
    plus a per-device bias, calibrated so the device's expected frame error
    rate equals a target drawn uniformly from ``error_rate_range``.
    ``sharpness`` scales the logistic slope; large values make labels close
    to a deterministic function of the features.
    """

    n_devices: int = 20
    frames_per_device: int = 2000
    n_features: int = 3
    shift: float = 0.5
    error_rate_range: tuple[float, float] = (0.28, 0.38)
    n_components: int = 3
    component_spread: float = 1.5
    sharpness: float = 20.0
    curvature: float = 0.5
    split: str = "chronological"

    def validate(self) -> None:
        lo, hi = self.error_rate_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"error rate range must lie inside (0, 1), got {self.error_rate_range}")
        for name in ("n_devices", "frames_per_device", "n_features", "n_components"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.frames_per_device < 2:
            raise ConfigError("need at least 2 frames per device for a 1:1 split")
        if self.shift < 0 or self.sharpness <= 0 or self.component_spread < 0:
            raise ConfigError("shift and spread must be >= 0, sharpness > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        d = dict(d)
        if "error_rate_range" in d:
            d["error_rate_range"] = tuple(d["error_rate_range"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic scenario config: {exc}") from None


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _calibrate_bias(score: np.ndarray, sharpness: float, target: float) -> float:
    """Bias ``b`` with ``mean(sigmoid(sharpness*(score+b))) == target`` (bisection)."""
    lo, hi = -score.max() - 50.0 / sharpness, -score.min() + 50.0 / sharpness
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sigmoid(sharpness * (score + mid)).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def ground_truth_score(x: np.ndarray, direction: np.ndarray, curvature: float) -> np.ndarray:
    return x @ direction + curvature * (x[:, 0] ** 2 - 1.0)


def generate_synthetic_scenario(cfg: SyntheticConfig | dict | None = None, seed: int = 0) -> Scenario:
    cfg = SyntheticConfig.from_dict(cfg) if isinstance(cfg, dict) else (cfg or SyntheticConfig())
    cfg.validate()
    D = cfg.n_features
    g = stream(seed, "synthetic", "global")
    centres = g.normal(scale=cfg.component_spread, size=(cfg.n_components, D))
    direction = g.normal(size=D)
    direction /= np.linalg.norm(direction)

    raw = []
    width = len(str(cfg.n_devices - 1))
    for d in range(cfg.n_devices):
        r = stream(seed, "synthetic", "device", d)
        offset = cfg.shift * r.normal(size=D)
        target = r.uniform(*cfg.error_rate_range)
        comp = r.integers(0, cfg.n_components, size=cfg.frames_per_device)
        x = centres[comp] + offset + r.normal(size=(cfg.frames_per_device, D))
        score = ground_truth_score(x, direction, cfg.curvature)
        bias = _calibrate_bias(score, cfg.sharpness, target)
        p_error = _sigmoid(cfg.sharpness * (score + bias))
        y = (r.uniform(size=cfg.frames_per_device) < p_error).astype(np.int64)
        raw.append((f"dev{d:0{width}d}", x, y))

    names = [f"x{i}" for i in range(D)]
    notes = {"generator": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
             "generator_seed": seed}
    return build_scenario(raw, "synthetic", names, cfg.split, seed, notes)


# -- canonical serialization --------------------------------------------------------------

INDEX_FILE = "index.json"


def _fmt(v: float) -> str:
    return repr(float(v))


def device_csv_lines(feature_names: Sequence[str], parts: Sequence[tuple[str, np.ndarray, np.ndarray]],
                     synthetic: bool = False) -> str:
    """CSV text with columns ``features..., label, split, synthetic``."""
    header = ",".join([*feature_names, "label", "split", "synthetic"])
    rows = [header]
    flag = "1" if synthetic else "0"
    for split_name, x, y in parts:
        for xi, yi in zip(x, y):
            rows.append(",".join([*(_fmt(v) for v in xi), str(int(yi)), split_name, flag]))
    return "\n".join(rows) + "\n"


def write_synthetic_csv(path, feature_names: Sequence[str], x: np.ndarray, y: np.ndarray) -> None:
    """Write SMOTE output in the scenario CSV schema with ``synthetic=1``."""
    Path(path).write_text(device_csv_lines(feature_names, [("train", x, y)], synthetic=True), encoding="utf-8")


def write_scenario(scenario: Scenario, out_dir) -> Path:
    out = Path(out_dir)
    (out / "devices").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, d in enumerate(scenario.devices):
        fname = f"devices/{i:05d}.csv"
        text = device_csv_lines(scenario.feature_names, [("train", d.train.x, d.train.y), ("test", d.test.x, d.test.y)])
        (out / fname).write_text(text, encoding="utf-8")
        entries.append({"device_id": d.device_id, "file": fname, "n_train": d.train.n, "n_test": d.test.n,
                        "frame_error_rate": d.frame_error_rate})
    index = {
        "format": "edgekd-scenario/1",
        "tag": scenario.tag,
        "feature_names": list(scenario.feature_names),
        "normalization": {"mean": [float(v) for v in scenario.normalization.mean],
                          "std": [float(v) for v in scenario.normalization.std]},
        "notes": scenario.notes,
        "devices": entries,
    }
    (out / INDEX_FILE).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def read_scenario(in_dir) -> Scenario:
    root = Path(in_dir)
    try:
        index = json.loads((root / INDEX_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{root} has no {INDEX_FILE}") from None
    names = index["feature_names"]
    devices = []
    for e in index["devices"]:
        frame = pd.read_csv(root / e["file"], float_precision="round_trip")
        x = frame[names].to_numpy(dtype=np.float64)
        y = frame["label"].to_numpy(dtype=np.int64)
        is_train = (frame["split"] == "train").to_numpy()
        devices.append(DeviceDataset(e["device_id"], index["tag"], Split(x[is_train], y[is_train]),
                                     Split(x[~is_train], y[~is_train]), float(e["frame_error_rate"])))
    norm = index["normalization"]
    return Scenario(index["tag"], tuple(devices), tuple(names),
                    Normalization(np.array(norm["mean"], dtype=np.float64), np.array(norm["std"], dtype=np.float64)),
                    index["notes"])


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    if (a.tag, a.feature_names, len(a.devices)) != (b.tag, b.feature_names, len(b.devices)):
        return False
    if not (np.array_equal(a.normalization.mean, b.normalization.mean)
            and np.array_equal(a.normalization.std, b.normalization.std)):
        return False
    for da, db in zip(a.devices, b.devices):
        if (da.device_id, da.scenario, da.frame_error_rate) != (db.device_id, db.scenario, db.frame_error_rate):
            return False
        for sa, sb in ((da.train, db.train), (da.test, db.test)):
            if not (np.array_equal(sa.x, sb.x) and np.array_equal(sa.y, sb.y)):
                return False
    return a.notes == b.notes
