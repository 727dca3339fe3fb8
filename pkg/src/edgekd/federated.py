"""FedAvg and DP-Fed over a scenario.

Each round the cloud samples a fraction of the devices, every sampled device
trains the current global model on its own training split, and the cloud
replaces the global model by the plain mean of the returned weights.  After
the last round the global model is evaluated on every device's test split.

Clients keep their optimizer state (momentum buffer) and epoch counter
between the rounds they take part in, so a one-device federation walks
exactly the trajectory of local training with the same epoch budget.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import nncore
from .dataio import Scenario
from .errors import ConfigError, ProtocolError, ShapeError
from .metrics import DeviceResult, MethodReport
from .nncore import ModelWeights
from .parallel import map_ordered
from .rng import stream
from .training import ShuffleKey, evaluate_loss, fit

PRIVACY_MODES = ("none", "dp")


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 10
    client_fraction: float = 0.1
    local_epochs: int = 1
    batch_size: int = 32
    privacy: str = "none"
    clip_norm: float = 1.0
    noise_std: float = 0.01
    lr: float = 1e-3
    momentum: float = 0.9
    hidden: tuple[int, ...] = (64, 64)
    weighted: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError(f"client fraction must lie in (0, 1], got {self.client_fraction}")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ConfigError("local_epochs and batch_size must be >= 1")
        if self.privacy not in PRIVACY_MODES:
            raise ConfigError(f"privacy must be one of {PRIVACY_MODES}, got {self.privacy!r}")

    @classmethod
    def from_hyperparams(cls, hp, privacy: str = "none") -> "FedConfig":
        return cls(rounds=hp.rounds, client_fraction=hp.client_fraction, local_epochs=hp.epochs_per_round,
                   batch_size=hp.batch_size, privacy=privacy, clip_norm=hp.dp_clip_norm,
                   noise_std=hp.dp_noise_std, lr=hp.student_lr, momentum=hp.student_momentum,
                   hidden=hp.student_hidden, weighted=hp.weighted_aggregation)


def client_count(device_count: int, fraction: float) -> int:
    """``max(1, round(fraction * N))`` with halves rounded up."""
    return max(1, min(device_count, int(math.floor(fraction * device_count + 0.5))))


def select_clients(device_count: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted device indices sampled uniformly without replacement."""
    if device_count < 1:
        raise ConfigError("cannot select clients from an empty scenario")
    if not 0 < fraction <= 1:
        raise ConfigError(f"client fraction must lie in (0, 1], got {fraction}")
    m = client_count(device_count, fraction)
    return np.sort(rng.choice(device_count, size=m, replace=False))


def aggregate(models: Sequence[ModelWeights], weights: Sequence[float] | None = None) -> ModelWeights:
    """Elementwise mean of the client models (weighted if ``weights`` is given).

    Per coordinate the client values are sorted before summation, so the
    result is bit-identical under any permutation of ``models``.
    """
    models = list(models)
    if not models:
        raise ProtocolError("nothing to aggregate")
    first = models[0]
    for m in models[1:]:
        if not first.same_shape(m):
            raise ShapeError("client models differ in shape")
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(models),) or np.any(w < 0) or w.sum() <= 0:
            raise ProtocolError("aggregation weights must be non-negative, one per model, not all zero")
    layers = []
    for li in range(len(first.layers)):
        pair = []
        for pi in range(2):
            stack = np.stack([m.layers[li][pi] for m in models])
            if weights is None:
                pair.append(np.sort(stack, axis=0).sum(axis=0) / len(models))
            else:
                scaled = stack * w.reshape((-1,) + (1,) * (stack.ndim - 1))
                pair.append(np.sort(scaled, axis=0).sum(axis=0) / w.sum())
        layers.append(tuple(pair))
    return ModelWeights(layers)


def _make_optimizer(cfg: FedConfig, model: ModelWeights) -> nncore.OptimizerState:
    if cfg.privacy == "dp":
        return nncore.dp_sgd(model, cfg.lr, cfg.momentum, cfg.clip_norm, cfg.noise_std)
    return nncore.sgd_momentum(model, cfg.lr, cfg.momentum)


@dataclass
class FederatedResult:
    report: MethodReport
    global_model: ModelWeights
    telemetry: list[dict]


def run_federated(scenario: Scenario, cfg: FedConfig, seed: int, *, threads: int = 1,
                  on_round: Callable[[dict], None] | None = None, method: str | None = None,
                  fingerprint: str = "") -> FederatedResult:
    devices = scenario.devices
    if not devices:
        raise ConfigError("scenario has no devices")
    sizes = [scenario.n_features, *cfg.hidden, 2]
    global_model = nncore.init_network(sizes, stream(seed, "init", "student"))
    opt_states: dict[int, nncore.OptimizerState] = {}
    epochs_done = [0] * len(devices)
    telemetry = []

    for t in range(cfg.rounds):
        chosen = select_clients(len(devices), cfg.client_fraction, stream(seed, "select", t))

        def client_update(i, start=global_model):
            d = devices[i]
            state = opt_states.get(i) or _make_optimizer(cfg, start)
            return fit(start, state, d.train.x, d.train.y, epochs=cfg.local_epochs, batch_size=cfg.batch_size,
                       key=ShuffleKey(seed, "student", i), first_epoch=epochs_done[i])

        results = map_ordered(client_update, chosen.tolist(), threads)
        for i, res in zip(chosen.tolist(), results):
            opt_states[i] = res.state
            epochs_done[i] += cfg.local_epochs
        weights = [devices[i].train.n for i in chosen] if cfg.weighted else None
        global_model = aggregate([r.model for r in results], weights)

        x = np.vstack([devices[i].train.x for i in chosen])
        y = np.concatenate([devices[i].train.y for i in chosen])
        record = {"round": t, "selected": [devices[i].device_id for i in chosen],
                  "global_train_loss": evaluate_loss(global_model, x, y),
                  "client_loss": float(np.mean([r.epoch_losses[-1] for r in results]))}
        telemetry.append(record)
        if on_round is not None:
            on_round(record)

    results = [
        DeviceResult(d.device_id, nncore.predict(global_model, d.test.x), d.test.y)
        for d in devices
    ]
    name = method or ("dpfed" if cfg.privacy == "dp" else "fedavg")
    notes = {"rounds": cfg.rounds, "clients_per_round": client_count(len(devices), cfg.client_fraction),
             "privacy": cfg.privacy, "aggregation": "sample-weighted" if cfg.weighted else "unweighted mean"}
    report = MethodReport(name, results, fingerprint, seed, notes)
    return FederatedResult(report, global_model, telemetry)


def telemetry_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
