"""Local baseline, cloud teacher and the knowledge-distillation pipelines.

``kd_scr``
    teacher trained on the pooled real training data; each device distills
    a student on its real training split.
``kd_smote``
    teacher trained on pooled SMOTE data only; students as in ``kd_scr``
    (teacher weights are shipped to the device, the device's data stays put).
``tf_kd``
    teacher as in ``kd_smote``; each device first distills a student on its
    own SMOTE data, then fine-tunes it with plain cross-entropy on its real
    training split.

Students are initialised from the same stream as Local and FedAvg models
and shuffle with the same per-device stream as Local, so with ``alpha=1``
a KD student is bit-identical to the Local model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .dataio import DeviceDataset, Scenario
from .errors import ConfigError, DataError, ShapeError
from .metrics import DeviceResult, MethodReport
from .nncore import ModelWeights
from .parallel import map_ordered
from .rng import stream
from .smote import SmoteConfig, SmoteResult, generate_synthetic_dataset
from .training import ShuffleKey, TeacherGuidance, fit

log = logging.getLogger(__name__)

VARIANTS = ("kd_scr", "kd_smote", "tf_kd")


@dataclass(frozen=True)
class KdConfig:
    temperature: float = 10.0
    alpha: float = 0.5
    teacher_hidden: tuple[int, ...] = (256, 256, 256)
    student_hidden: tuple[int, ...] = (64, 64)
    teacher_lr: float = 1e-4
    student_lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    local_epochs: int = 10
    teacher_epochs: int = 10
    kd_epochs: int = 10
    finetune_epochs: int = 10
    kl_mode: str = "teacher-reference"
    kd_smote_student_data: str = "real"
    smote: SmoteConfig = field(default_factory=SmoteConfig)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kd_smote_student_data not in ("real", "smote"):
            raise ConfigError(f"kd_smote_student_data must be real or smote, got {self.kd_smote_student_data!r}")

    @classmethod
    def from_hyperparams(cls, hp) -> "KdConfig":
        return cls(temperature=hp.temperature, alpha=hp.alpha, teacher_hidden=hp.teacher_hidden,
                   student_hidden=hp.student_hidden, teacher_lr=hp.teacher_lr, student_lr=hp.student_lr,
                   momentum=hp.student_momentum, batch_size=hp.batch_size, local_epochs=hp.local_epochs,
                   teacher_epochs=hp.teacher_epochs, kd_epochs=hp.kd_epochs, finetune_epochs=hp.finetune_epochs,
                   kl_mode=hp.kl_mode, kd_smote_student_data=hp.kd_smote_student_data,
                   smote=SmoteConfig(hp.smote_k, hp.smote_samples_per_class, hp.smote_mode))

    def student_sizes(self, n_features: int) -> list[int]:
        return [n_features, *self.student_hidden, 2]

    def teacher_sizes(self, n_features: int) -> list[int]:
        return [n_features, *self.teacher_hidden, 2]


class CloudAudit:
    """Records every batch of rows handed to a cloud-side operation.

    Each record keeps the rows themselves and their provenance flags, so a
    run can be checked both by flag (``real_rows``) and by content against
    the devices' real data (``rows``).
    """

    def __init__(self):
        self.records: list[dict] = []

    def record(self, operation: str, x: np.ndarray, synthetic: np.ndarray) -> None:
        synthetic = np.asarray(synthetic, dtype=bool)
        self.records.append({"operation": operation, "rows": np.array(x, copy=True), "synthetic": synthetic.copy()})

    @property
    def real_rows(self) -> int:
        return int(sum(np.sum(~r["synthetic"]) for r in self.records))

    @property
    def total_rows(self) -> int:
        return int(sum(r["synthetic"].size for r in self.records))

    def rows(self) -> np.ndarray:
        return np.vstack([r["rows"] for r in self.records]) if self.records else np.empty((0, 0))

    def summary(self) -> list[dict]:
        return [{"operation": r["operation"], "rows": int(r["synthetic"].size),
                 "real_rows": int(np.sum(~r["synthetic"]))} for r in self.records]


def _student_init(cfg: KdConfig, n_features: int, seed: int) -> ModelWeights:
    return nncore.init_network(cfg.student_sizes(n_features), stream(seed, "init", "student"))


def _sgd(cfg: KdConfig, model: ModelWeights) -> nncore.OptimizerState:
    return nncore.sgd_momentum(model, cfg.student_lr, cfg.momentum)


def train_local(device: DeviceDataset, cfg: KdConfig, seed: int, device_index: int = 0,
                epochs: int | None = None) -> ModelWeights:
    """Student network trained with cross-entropy on the device's training split only."""
    model = _student_init(cfg, device.train.x.shape[1], seed)
    res = fit(model, _sgd(cfg, model), device.train.x, device.train.y,
              epochs=cfg.local_epochs if epochs is None else epochs, batch_size=cfg.batch_size,
              key=ShuffleKey(seed, "student", device_index))
    return res.model


def device_smote(scenario: Scenario, smote_cfg: SmoteConfig, seed: int,
                 threads: int = 1) -> dict[int, SmoteResult | None]:
    """SMOTE replacement of every device's training split; ``None`` where it fails."""

    def one(i):
        d = scenario.devices[i]
        try:
            return generate_synthetic_dataset(d.train.x, d.train.y, smote_cfg, stream(seed, "smote", i), d.device_id)
        except DataError as exc:
            log.warning("SMOTE failed, device falls back to Local: %s", exc)
            return None

    idx = list(range(len(scenario.devices)))
    return dict(zip(idx, map_ordered(one, idx, threads)))


@dataclass
class Pool:
    x: np.ndarray
    y: np.ndarray
    synthetic: np.ndarray
    source: str
    contributors: list[str]
    excluded: list[str]


def pool_training_data(scenario: Scenario, source: str, smote_cfg: SmoteConfig | None = None, seed: int = 0,
                       synthetic: dict[int, SmoteResult | None] | None = None,
                       audit: CloudAudit | None = None) -> Pool:
    """What the cloud receives: every device's real training rows, or their SMOTE stand-ins.

    In ``smote`` mode devices whose generation failed send nothing.
    """
    if source == "real":
        parts = [(d.device_id, d.train.x, d.train.y, False) for d in scenario.devices]
        excluded = []
    elif source == "smote":
        if synthetic is None:
            synthetic = device_smote(scenario, smote_cfg or SmoteConfig(), seed)
        parts, excluded = [], []
        for i, d in enumerate(scenario.devices):
            res = synthetic.get(i)
            if res is None:
                excluded.append(d.device_id)
            else:
                parts.append((d.device_id, res.x, res.y, True))
    else:
        raise ConfigError(f"pool source must be real or smote, got {source!r}")
    if not parts:
        raise DataError("no device contributed training data to the cloud pool")
    x = np.vstack([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    flags = np.concatenate([np.full(p[1].shape[0], p[3]) for p in parts])
    if audit is not None:
        audit.record(f"pool:{source}", x, flags)
    return Pool(x, y, flags, source, [p[0] for p in parts], excluded)


@dataclass
class TeacherResult:
    model: ModelWeights
    epoch_losses: list[float]
    source: str


def train_teacher(pool: Pool, cfg: KdConfig, seed: int, audit: CloudAudit | None = None,
                  epochs: int | None = None) -> TeacherResult:
    """High-capacity network trained with Adam and cross-entropy on the cloud pool."""
    if audit is not None:
        audit.record(f"train_teacher:{pool.source}", pool.x, pool.synthetic)
    model = nncore.init_network(cfg.teacher_sizes(pool.x.shape[1]), stream(seed, "init", "teacher"))
    state = nncore.adam(model, cfg.teacher_lr)
    res = fit(model, state, pool.x, pool.y, epochs=cfg.teacher_epochs if epochs is None else epochs,
              batch_size=cfg.batch_size, key=ShuffleKey(seed, f"teacher-{pool.source}"))
    return TeacherResult(res.model, res.epoch_losses, pool.source)


def train_student_kd(x: np.ndarray, y: np.ndarray, teacher: ModelWeights, cfg: KdConfig, seed: int,
                     device_index: int = 0, phase: str = "student", epochs: int | None = None,
                     init: ModelWeights | None = None) -> ModelWeights:
    """Student minimising ``alpha*CE + (1-alpha)*T^2*KL`` against the frozen teacher."""
    if teacher.layer_sizes[0] != x.shape[1]:
        raise ShapeError(f"teacher expects {teacher.layer_sizes[0]} features, data has {x.shape[1]}")
    model = init if init is not None else _student_init(cfg, x.shape[1], seed)
    guidance = TeacherGuidance(teacher, cfg.temperature, cfg.alpha, cfg.kl_mode)
    res = fit(model, _sgd(cfg, model), x, y, epochs=cfg.kd_epochs if epochs is None else epochs,
              batch_size=cfg.batch_size, key=ShuffleKey(seed, phase, device_index), guidance=guidance)
    return res.model


def finetune(model: ModelWeights, x: np.ndarray, y: np.ndarray, cfg: KdConfig, seed: int,
             device_index: int = 0, epochs: int | None = None) -> ModelWeights:
    """Second TF-KD stage: plain cross-entropy on the device's real data, fresh optimizer."""
    res = fit(model, _sgd(cfg, model), x, y, epochs=cfg.finetune_epochs if epochs is None else epochs,
              batch_size=cfg.batch_size, key=ShuffleKey(seed, "finetune", device_index))
    return res.model


def _evaluate(scenario: Scenario, models: list[ModelWeights], fallbacks: set[int]) -> list[DeviceResult]:
    return [DeviceResult(d.device_id, nncore.predict(m, d.test.x), d.test.y, i in fallbacks)
            for i, (d, m) in enumerate(zip(scenario.devices, models))]


def run_local(scenario: Scenario, cfg: KdConfig, seed: int, threads: int = 1,
              fingerprint: str = "") -> tuple[MethodReport, list[ModelWeights]]:
    idx = list(range(len(scenario.devices)))
    models = map_ordered(lambda i: train_local(scenario.devices[i], cfg, seed, i), idx, threads)
    report = MethodReport("local", _evaluate(scenario, models, set()), fingerprint, seed,
                          {"epochs": cfg.local_epochs})
    return report, models


@dataclass
class KdRun:
    report: MethodReport
    teacher: TeacherResult
    students: list[ModelWeights]
    audit: CloudAudit


def run_kd_pipeline(scenario: Scenario, variant: str, cfg: KdConfig, seed: int, *, threads: int = 1,
                    teacher: TeacherResult | None = None, synthetic: dict | None = None,
                    audit: CloudAudit | None = None, fingerprint: str = "") -> KdRun:
    """Train (or reuse) the cloud teacher, then every device's student, and evaluate.

    ``teacher`` and ``synthetic`` let one run share the SMOTE teacher and
    device SMOTE sets between ``kd_smote`` and ``tf_kd``.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"KD variant must be one of {VARIANTS}, got {variant!r}")
    audit = audit if audit is not None else CloudAudit()
    source = "real" if variant == "kd_scr" else "smote"
    if source == "smote" and synthetic is None:
        synthetic = device_smote(scenario, cfg.smote, seed, threads)
    if teacher is None:
        pool = pool_training_data(scenario, source, cfg.smote, seed, synthetic, audit)
        teacher = train_teacher(pool, cfg, seed, audit)
    elif teacher.source != source:
        raise ConfigError(f"{variant} needs a teacher trained on {source} data, got {teacher.source}")

    fallbacks = {i for i in range(len(scenario.devices)) if source == "smote" and synthetic.get(i) is None}

    def student(i):
        d = scenario.devices[i]
        if i in fallbacks:
            return train_local(d, cfg, seed, i)
        if variant == "tf_kd":
            s = synthetic[i]
            stage1 = train_student_kd(s.x, s.y, teacher.model, cfg, seed, i, phase="smote-kd")
            return finetune(stage1, d.train.x, d.train.y, cfg, seed, i)
        if variant == "kd_smote" and cfg.kd_smote_student_data == "smote":
            s = synthetic[i]
            return train_student_kd(s.x, s.y, teacher.model, cfg, seed, i, phase="smote-kd")
        return train_student_kd(d.train.x, d.train.y, teacher.model, cfg, seed, i)

    students = map_ordered(student, list(range(len(scenario.devices))), threads)
    notes = {"teacher_source": source, "temperature": cfg.temperature, "alpha": cfg.alpha,
             "kl_mode": cfg.kl_mode, "smote_mode": cfg.smote.mode if source == "smote" else None,
             "student_data": "smote" if variant == "tf_kd" or (variant == "kd_smote" and cfg.kd_smote_student_data == "smote") else "real",
             "finetune_epochs": cfg.finetune_epochs if variant == "tf_kd" else None}
    report = MethodReport(variant, _evaluate(scenario, students, fallbacks), fingerprint, seed, notes)
    return KdRun(report, teacher, students, audit)
