"""Minibatch training loop shared by every method.

Local, federated clients, students and the teacher all go through
:func:`fit`, which is what makes the degenerate equivalences exact: with
matching init, shuffle stream and loss gradient, two methods walk the same
trajectory bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .nncore import LossSpec, ModelWeights, OptimizerState
from .rng import stream


@dataclass(frozen=True)
class ShuffleKey:
    """Identifies the shuffle and noise streams of one training phase on one device.

    Epoch ``e`` of a phase draws its permutation from
    ``stream(seed, "shuffle", phase, e)``, so splitting a run into rounds of
    a few epochs each replays the same orders.  The permutation does not
    depend on the device: two devices holding the same data take the same
    steps.  DP noise is drawn per device.
    """

    seed: int
    phase: str
    device: int = 0

    def order(self, epoch: int, n: int) -> np.ndarray:
        return stream(self.seed, "shuffle", self.phase, epoch).permutation(n)

    def noise(self, epoch: int) -> np.random.Generator:
        return stream(self.seed, "dp-noise", self.phase, self.device, epoch)


@dataclass
class TeacherGuidance:
    """Frozen teacher whose logits are recomputed for every student batch."""

    teacher: ModelWeights
    temperature: float
    alpha: float
    kl_mode: str = "teacher-reference"

    def spec(self, xb: np.ndarray) -> LossSpec:
        return LossSpec.kd(nncore.forward(self.teacher, xb), self.temperature, self.alpha, self.kl_mode)


@dataclass
class FitResult:
    model: ModelWeights
    state: OptimizerState
    epoch_losses: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def fit(model: ModelWeights, state: OptimizerState, x: np.ndarray, y: np.ndarray, *,
        epochs: int, batch_size: int, key: ShuffleKey, first_epoch: int = 0,
        guidance: TeacherGuidance | None = None) -> FitResult:
    """Run ``epochs`` passes of minibatch training, returning the new model and state.

    ``first_epoch`` offsets the epoch counter so a run resumed round by round
    uses the same shuffle streams as an uninterrupted run.
    """
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = x.shape[0]
    epoch_losses, step_losses = [], []
    for e in range(first_epoch, first_epoch + epochs):
        order = key.order(e, n)
        noise_rng = key.noise(e) if state.kind == "dp-sgd" else None
        total = 0.0
        for idx in nncore.batches(n, batch_size, order):
            xb, yb = x[idx], y[idx]
            spec = guidance.spec(xb) if guidance is not None else None
            if state.kind == "dp-sgd":
                loss, model, state = nncore.dp_sgd_step(state, model, xb, yb, spec, noise_rng)
            else:
                loss, grads = nncore.loss_and_gradients(model, xb, yb, spec)
                step = nncore.adam_step if state.kind == "adam" else nncore.sgd_momentum_step
                model, state = step(state, model, grads)
            step_losses.append(loss)
            total += loss * len(idx)
        epoch_losses.append(total / max(n, 1))
    return FitResult(model, state, epoch_losses, step_losses)


def evaluate_loss(model: ModelWeights, x: np.ndarray, y: np.ndarray) -> float:
    return nncore.cross_entropy(nncore.softmax_temperature(nncore.forward(model, x)), y)
