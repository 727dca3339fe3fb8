"""Hyperparameters and named profiles.

Values the method description pins down (temperature 10, alpha 0.4/0.5,
k=5, 10 rounds, noise std 0.01, SGD 1e-3 with momentum 0.9, Adam 1e-4) are
the defaults; everything else is a conventional choice and overridable.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class HyperParams:
    # networks
    student_hidden: tuple[int, ...] = (64, 64)
    teacher_hidden: tuple[int, ...] = (256, 256, 256)
    batch_size: int = 32
    student_lr: float = 1e-3
    student_momentum: float = 0.9
    teacher_lr: float = 1e-4
    # epochs
    local_epochs: int = 10
    teacher_epochs: int = 10
    kd_epochs: int = 10
    finetune_epochs: int = 10
    # federated
    rounds: int = 10
    client_fraction: float = 0.1
    epochs_per_round: int = 1
    weighted_aggregation: bool = False
    dp_clip_norm: float = 1.0
    dp_noise_std: float = 0.01
    # distillation
    temperature: float = 10.0
    alpha: float = 0.5
    kl_mode: str = "teacher-reference"
    kd_smote_student_data: str = "real"
    # SMOTE
    smote_k: int = 5
    smote_samples_per_class: int | str = "match-real"
    smote_mode: str = "as-written"

    def __post_init__(self):
        object.__setattr__(self, "student_hidden", tuple(int(h) for h in self.student_hidden))
        object.__setattr__(self, "teacher_hidden", tuple(int(h) for h in self.teacher_hidden))
        self.validate()

    def validate(self) -> None:
        positive_ints = ("batch_size", "rounds", "epochs_per_round", "smote_k")
        for name in positive_ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("local_epochs", "teacher_epochs", "kd_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("student_lr", "teacher_lr", "temperature", "dp_clip_norm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 <= self.student_momentum < 1:
            raise ConfigError(f"student_momentum must lie in [0, 1), got {self.student_momentum}")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError(f"client_fraction must lie in (0, 1], got {self.client_fraction}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.dp_noise_std < 0:
            raise ConfigError(f"dp_noise_std must be >= 0, got {self.dp_noise_std}")
        if any(h < 1 for h in self.student_hidden + self.teacher_hidden):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.kl_mode not in ("teacher-reference", "as-written"):
            raise ConfigError(f"unknown kl_mode {self.kl_mode!r}")
        if self.kd_smote_student_data not in ("real", "smote"):
            raise ConfigError(f"kd_smote_student_data must be 'real' or 'smote', got {self.kd_smote_student_data!r}")
        if self.smote_mode not in ("as-written", "standard"):
            raise ConfigError(f"unknown smote_mode {self.smote_mode!r}")

    def student_sizes(self, n_features: int) -> list[int]:
        return [n_features, *self.student_hidden, 2]

    def teacher_sizes(self, n_features: int) -> list[int]:
        return [n_features, *self.teacher_hidden, 2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["student_hidden"] = list(self.student_hidden)
        d["teacher_hidden"] = list(self.teacher_hidden)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown hyperparameters {unknown}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid hyperparameters: {exc}") from None

    def with_overrides(self, **kw) -> "HyperParams":
        return replace(self, **kw)


PROFILES: dict[str, dict] = {
    "scr4": {"alpha": 0.4},
    "scr5": {"alpha": 0.5},
    # desk-scale runs on generated scenarios; the small synthetic datasets
    # need more passes than the default 10 epochs to converge
    "synthetic": {"alpha": 0.5, "local_epochs": 20, "kd_epochs": 20, "finetune_epochs": 10},
}


def profile(name: str, **overrides) -> HyperParams:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}")
    return HyperParams.from_dict({**PROFILES[name], **overrides})
