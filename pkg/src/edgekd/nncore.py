"""Feed-forward network engine in plain numpy.

ReLU hidden layers, a linear two-logit output, exact backpropagation for the
cross-entropy and distillation losses, and three optimizers (SGD with
momentum, Adam, and DP-SGD: per-example clipping plus Gaussian noise).
Everything runs in float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError

N_CLASSES = 2
PROB_FLOOR = 1e-12

KD_KL_MODES = ("teacher-reference", "as-written")


@dataclass
class ModelWeights:
    """Ordered ``(W, b)`` pairs; ``W`` of layer ``i`` is ``sizes[i+1] x sizes[i]``.

    Gradients and optimizer accumulators reuse this type so every
    parameter-shaped quantity can be combined layer by layer.
    """

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.layers[i - 1][0].shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer emits "
                    f"{self.layers[i - 1][0].shape[0]}"
                )

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    def total_parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in self.layers for a in pair]

    def copy(self) -> "ModelWeights":
        return ModelWeights([(w.copy(), b.copy()) for w, b in self.layers])

    def zeros_like(self) -> "ModelWeights":
        return ModelWeights([(np.zeros_like(w), np.zeros_like(b)) for w, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, vector: np.ndarray, layer_sizes: Sequence[int]) -> "ModelWeights":
        vector = np.asarray(vector, dtype=np.float64)
        layers, pos = [], 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            w = vector[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            b = vector[pos : pos + fan_out]
            pos += fan_out
            layers.append((w.copy(), b.copy()))
        if pos != vector.size:
            raise ShapeError(f"flat vector has {vector.size} entries, layout needs {pos}")
        return cls(layers)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def same_shape(self, other: "ModelWeights") -> bool:
        return len(self.layers) == len(other.layers) and all(
            w.shape == ow.shape and b.shape == ob.shape
            for (w, b), (ow, ob) in zip(self.layers, other.layers)
        )

    def equals(self, other: "ModelWeights") -> bool:
        """Bit-for-bit equality."""
        return self.same_shape(other) and all(
            np.array_equal(a, o) for a, o in zip(self.arrays(), other.arrays())
        )


def _check_sizes(layer_sizes: Sequence[int]) -> list[int]:
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ConfigError(f"need at least input and output sizes, got {sizes}")
    if any(int(s) != s or s <= 0 for s in sizes):
        raise ConfigError(f"layer sizes must be positive integers, got {sizes}")
    if sizes[-1] != N_CLASSES:
        raise ConfigError(f"output layer must have {N_CLASSES} logits, got {sizes[-1]}")
    return [int(s) for s in sizes]


def init_network(layer_sizes: Sequence[int], seed: int | np.random.Generator) -> ModelWeights:
    """Glorot-uniform weights in ``+-sqrt(6 / (fan_in + fan_out))``, zero biases."""
    sizes = _check_sizes(layer_sizes)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return ModelWeights(layers)


def _as_features(model: ModelWeights, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ShapeError(f"features of shape {x.shape} do not fit input dim {model.layer_sizes[0]}")
    return x


def _forward_cache(model: ModelWeights, x: np.ndarray) -> list[np.ndarray]:
    # activations[0] is the input, activations[-1] the logits; hidden entries post-ReLU
    activations = [x]
    last = len(model.layers) - 1
    a = x
    for i, (w, b) in enumerate(model.layers):
        z = a @ w.T + b
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return activations


def forward(model: ModelWeights, x) -> np.ndarray:
    """Logits of shape ``(batch, 2)``."""
    return _forward_cache(model, _as_features(model, x))[-1]


def predict(model: ModelWeights, x) -> np.ndarray:
    """Class with the larger logit; an exact tie goes to class 0."""
    logits = forward(model, x)
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def _check_temperature(T: float) -> float:
    if not T > 0:
        raise ConfigError(f"temperature must be > 0, got {T}")
    return float(T)


def softmax_temperature(logits, T: float = 1.0) -> np.ndarray:
    T = _check_temperature(T)
    u = np.asarray(logits, dtype=np.float64) / T
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_temperature(logits, T: float = 1.0) -> np.ndarray:
    T = _check_temperature(T)
    u = np.asarray(logits, dtype=np.float64) / T
    u = u - u.max(axis=-1, keepdims=True)
    return u - np.log(np.exp(u).sum(axis=-1, keepdims=True))


def _check_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"labels must be a vector, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for a batch of {n}")
    if y.size and not np.all((y == 0) | (y == 1)):
        bad = np.unique(y[(y != 0) & (y != 1)])
        raise DataError(f"labels must be 0 or 1, found {bad[:5].tolist()}")
    return y.astype(np.int64)


def cross_entropy(probs, y) -> float:
    """Mean of ``-log p(y)`` with probabilities floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    y = _check_labels(y, probs.shape[0])
    picked = probs[np.arange(y.size), y]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def _check_pair(o_s, o_t) -> tuple[np.ndarray, np.ndarray]:
    o_s = np.asarray(o_s, dtype=np.float64)
    o_t = np.asarray(o_t, dtype=np.float64)
    if o_s.ndim == 1:
        o_s = o_s[None, :]
    if o_t.ndim == 1:
        o_t = o_t[None, :]
    if o_s.shape != o_t.shape:
        raise ShapeError(f"student logits {o_s.shape} and teacher logits {o_t.shape} are not batch-aligned")
    return o_s, o_t


def kd_kl_loss(o_s, o_t, T: float, mode: str = "teacher-reference") -> float:
    """``T**2`` times the batch-mean KL divergence between softened outputs.

    ``teacher-reference`` is ``KL(p_t || p_s)``; ``as-written`` swaps the
    arguments to ``KL(p_s || p_t)``.
    """
    o_s, o_t = _check_pair(o_s, o_t)
    T = _check_temperature(T)
    log_ps = log_softmax_temperature(o_s, T)
    log_pt = log_softmax_temperature(o_t, T)
    if mode == "teacher-reference":
        kl = np.sum(np.exp(log_pt) * (log_pt - log_ps), axis=1)
    elif mode == "as-written":
        kl = np.sum(np.exp(log_ps) * (log_ps - log_pt), axis=1)
    else:
        raise ConfigError(f"unknown KL mode {mode!r}; expected one of {KD_KL_MODES}")
    return float(T * T * np.mean(kl))


def _check_alpha(alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha)


def kd_total_loss(o_s, y, o_t, T: float, alpha: float, mode: str = "teacher-reference") -> float:
    alpha = _check_alpha(alpha)
    l_s = cross_entropy(softmax_temperature(o_s, 1.0), y)
    l_kl = kd_kl_loss(o_s, o_t, T, mode)
    return alpha * l_s + (1.0 - alpha) * l_kl


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    temperature: float = 1.0
    alpha: float = 1.0
    teacher_logits: np.ndarray | None = None
    kl_mode: str = "teacher-reference"

    def __post_init__(self):
        if self.kind not in ("ce", "kd"):
            raise ConfigError(f"loss kind must be 'ce' or 'kd', got {self.kind!r}")
        _check_temperature(self.temperature)
        _check_alpha(self.alpha)
        if self.kl_mode not in KD_KL_MODES:
            raise ConfigError(f"unknown KL mode {self.kl_mode!r}")
        if self.kind == "kd" and self.teacher_logits is None:
            raise ConfigError("a kd loss needs teacher logits")

    @classmethod
    def kd(cls, teacher_logits, temperature: float, alpha: float, kl_mode: str = "teacher-reference"):
        return cls("kd", temperature, alpha, np.asarray(teacher_logits, dtype=np.float64), kl_mode)


def _loss_and_logit_grad(logits: np.ndarray, y: np.ndarray, spec: LossSpec) -> tuple[float, np.ndarray]:
    """Loss value and per-row gradient wrt the logits (not divided by batch size)."""
    n = logits.shape[0]
    probs = softmax_temperature(logits, 1.0)
    picked = probs[np.arange(n), y]
    ce = float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))
    d_ce = probs.copy()
    d_ce[np.arange(n), y] -= 1.0
    d_ce[picked < PROB_FLOOR] = 0.0
    if spec.kind == "ce":
        return ce, d_ce

    o_t = spec.teacher_logits
    if o_t.shape != logits.shape:
        raise ShapeError(f"teacher logits {o_t.shape} not aligned with student logits {logits.shape}")
    T = spec.temperature
    log_ps = log_softmax_temperature(logits, T)
    log_pt = log_softmax_temperature(o_t, T)
    p_s = np.exp(log_ps)
    if spec.kl_mode == "teacher-reference":
        p_t = np.exp(log_pt)
        kl_rows = np.sum(p_t * (log_pt - log_ps), axis=1)
        d_kl = T * (p_s - p_t)
    else:
        diff = log_ps - log_pt
        kl_rows = np.sum(p_s * diff, axis=1)
        d_kl = T * p_s * (diff - kl_rows[:, None])
    l_kl = float(T * T * np.mean(kl_rows))
    a = spec.alpha
    return a * ce + (1.0 - a) * l_kl, a * d_ce + (1.0 - a) * d_kl


def _backward(model: ModelWeights, activations: list[np.ndarray], delta: np.ndarray) -> ModelWeights:
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        a_prev = activations[i]
        grads[i] = (delta.T @ a_prev, delta.sum(axis=0))
        if i:
            delta = (delta @ model.layers[i][0]) * (a_prev > 0)
    return ModelWeights(grads)


def _backward_per_example(model, activations, delta) -> list[tuple[np.ndarray, np.ndarray]]:
    # same recursion, keeping a leading batch axis on every gradient
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        a_prev = activations[i]
        grads[i] = (np.einsum("bo,bi->boi", delta, a_prev), delta.copy())
        if i:
            delta = (delta @ model.layers[i][0]) * (a_prev > 0)
    return grads


def loss_and_gradients(model: ModelWeights, x, y, spec: LossSpec | None = None) -> tuple[float, ModelWeights]:
    """Batch-mean loss and its exact gradient wrt every parameter."""
    spec = spec or LossSpec()
    x = _as_features(model, x)
    y = _check_labels(y, x.shape[0])
    activations = _forward_cache(model, x)
    loss, d_logits = _loss_and_logit_grad(activations[-1], y, spec)
    return loss, _backward(model, activations, d_logits / x.shape[0])


def per_example_gradients(model: ModelWeights, x, y, spec: LossSpec | None = None):
    """Batch-mean loss and per-example gradients.

    The gradient list mirrors ``model.layers`` with an extra leading batch
    axis: ``grads[i] = (dW[b, out, in], db[b, out])`` where row ``b`` is the
    gradient of example ``b``'s own loss.
    """
    spec = spec or LossSpec()
    x = _as_features(model, x)
    y = _check_labels(y, x.shape[0])
    activations = _forward_cache(model, x)
    loss, d_logits = _loss_and_logit_grad(activations[-1], y, spec)
    return loss, _backward_per_example(model, activations, d_logits)


# -- optimizers ---------------------------------------------------------------

OPTIMIZER_KINDS = ("sgd-momentum", "adam", "dp-sgd")


@dataclass
class OptimizerState:
    kind: str
    lr: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    noise_std: float = 0.0
    step: int = 0
    buffers: list[ModelWeights] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.kind == "dp-sgd":
            if not self.clip_norm > 0:
                raise ConfigError(f"clip norm must be > 0, got {self.clip_norm}")
            if not self.noise_std >= 0:
                raise ConfigError(f"noise std must be >= 0, got {self.noise_std}")


def sgd_momentum(model: ModelWeights, lr: float = 1e-3, momentum: float = 0.9) -> OptimizerState:
    return OptimizerState("sgd-momentum", lr, momentum, buffers=[model.zeros_like()])


def adam(model: ModelWeights, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    return OptimizerState("adam", lr, beta1=beta1, beta2=beta2, eps=eps,
                          buffers=[model.zeros_like(), model.zeros_like()])


def dp_sgd(model: ModelWeights, lr: float = 1e-3, momentum: float = 0.9,
           clip_norm: float = 1.0, noise_std: float = 0.01) -> OptimizerState:
    return OptimizerState("dp-sgd", lr, momentum, clip_norm=clip_norm, noise_std=noise_std,
                          buffers=[model.zeros_like()])


def _require(state: OptimizerState, model: ModelWeights, grads: ModelWeights, kinds: tuple[str, ...]):
    if state.kind not in kinds:
        raise ConfigError(f"optimizer state of kind {state.kind!r} used for a {kinds[0]} step")
    if not model.same_shape(grads) or not all(model.same_shape(b) for b in state.buffers):
        raise ShapeError("model, gradient and optimizer buffer shapes differ")


def sgd_momentum_step(state: OptimizerState, model: ModelWeights, grads: ModelWeights):
    """``v <- mu*v + g``; ``w <- w - lr*v``.  Returns new ``(model, state)``."""
    _require(state, model, grads, ("sgd-momentum", "dp-sgd"))
    mu, lr = state.momentum, state.lr
    new_v, new_w = [], []
    for (w, b), (gw, gb), (vw, vb) in zip(model.layers, grads.layers, state.buffers[0].layers):
        vw, vb = mu * vw + gw, mu * vb + gb
        new_v.append((vw, vb))
        new_w.append((w - lr * vw, b - lr * vb))
    return ModelWeights(new_w), replace(state, step=state.step + 1, buffers=[ModelWeights(new_v)])


def adam_step(state: OptimizerState, model: ModelWeights, grads: ModelWeights):
    _require(state, model, grads, ("adam",))
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    m_new, v_new, w_new = [], [], []
    for p, g, m, v in zip(model.layers, grads.layers, state.buffers[0].layers, state.buffers[1].layers):
        m_pair, v_pair, w_pair = [], [], []
        for pi, gi, mi, vi in zip(p, g, m, v):
            mi = b1 * mi + (1.0 - b1) * gi
            vi = b2 * vi + (1.0 - b2) * gi * gi
            m_pair.append(mi)
            v_pair.append(vi)
            w_pair.append(pi - state.lr * (mi / c1) / (np.sqrt(vi / c2) + state.eps))
        m_new.append(tuple(m_pair))
        v_new.append(tuple(v_pair))
        w_new.append(tuple(w_pair))
    return ModelWeights(w_new), replace(state, step=t, buffers=[ModelWeights(m_new), ModelWeights(v_new)])


def _clip_and_noise_batched(per_example, clip_norm: float, noise_std: float, rng) -> ModelWeights:
    if not clip_norm > 0:
        raise ConfigError(f"clip norm must be > 0, got {clip_norm}")
    if not noise_std >= 0:
        raise ConfigError(f"noise std must be >= 0, got {noise_std}")
    batch = per_example[0][1].shape[0]
    if batch < 1:
        raise DataError("need at least one per-example gradient")
    sq = np.zeros(batch)
    for gw, gb in per_example:
        sq += np.sum(gw * gw, axis=(1, 2)) + np.sum(gb * gb, axis=1)
    norms = np.sqrt(sq)
    scale = np.ones(batch)
    over = norms > clip_norm
    scale[over] = clip_norm / norms[over]
    out = []
    for gw, gb in per_example:
        mw = np.einsum("b,boi->oi", scale, gw) / batch
        mb = (scale @ gb) / batch
        if noise_std > 0:
            mw = mw + rng.normal(0.0, noise_std, size=mw.shape)
            mb = mb + rng.normal(0.0, noise_std, size=mb.shape)
        out.append((mw, mb))
    return ModelWeights(out)


def dp_clip_and_noise(per_example_grads: Sequence[ModelWeights], clip_norm: float,
                      noise_std: float, rng: np.random.Generator | None = None) -> ModelWeights:
    """Clip each example's gradient to global L2 norm ``clip_norm``, average, add noise.

    The noise is i.i.d. ``N(0, noise_std**2)`` on every coordinate of the
    averaged gradient.
    """
    grads = list(per_example_grads)
    if not grads:
        raise DataError("need at least one per-example gradient")
    stacked = [
        (np.stack([g.layers[i][0] for g in grads]), np.stack([g.layers[i][1] for g in grads]))
        for i in range(len(grads[0].layers))
    ]
    if noise_std > 0 and rng is None:
        raise ConfigError("noise_std > 0 needs a random generator")
    return _clip_and_noise_batched(stacked, clip_norm, noise_std, rng)


def dp_sgd_step(state: OptimizerState, model: ModelWeights, x, y, spec: LossSpec | None,
                rng: np.random.Generator):
    """One DP-SGD update: per-example gradients, clip, average, noise, momentum step."""
    if state.kind != "dp-sgd":
        raise ConfigError(f"optimizer state of kind {state.kind!r} used for a dp-sgd step")
    loss, per_example = per_example_gradients(model, x, y, spec)
    grads = _clip_and_noise_batched(per_example, state.clip_norm, state.noise_std, rng)
    model, state = sgd_momentum_step(state, model, grads)
    return loss, model, state


# -- portable weight files -------------------------------------------------------
#
# magic "EKDW", u32 version, u32 layer count, then (u32 out, u32 in) per layer,
# then for each layer W row-major followed by b, all little-endian float64.

_MAGIC = b"EKDW"
_VERSION = 1


def weights_to_bytes(model: ModelWeights) -> bytes:
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(model.layers))]
    parts += [struct.pack("<II", *w.shape) for w, _ in model.layers]
    for w, b in model.layers:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def weights_from_bytes(blob: bytes) -> ModelWeights:
    if blob[:4] != _MAGIC:
        raise DataError("not a weight file (bad magic)")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise DataError(f"unsupported weight file version {version}")
    pos = 12
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", blob, pos))
        pos += 8
    layers = []
    for out, inp in shapes:
        w = np.frombuffer(blob, dtype="<f8", count=out * inp, offset=pos).reshape(out, inp)
        pos += 8 * out * inp
        b = np.frombuffer(blob, dtype="<f8", count=out, offset=pos)
        pos += 8 * out
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    if pos != len(blob):
        raise DataError(f"weight file has {len(blob) - pos} trailing bytes")
    return ModelWeights(layers)


def save_weights(model: ModelWeights, path) -> None:
    Path(path).write_bytes(weights_to_bytes(model))


def load_weights(path) -> ModelWeights:
    return weights_from_bytes(Path(path).read_bytes())


def batches(n: int, batch_size: int, order: Iterable[int] | None = None):
    """Yield index arrays covering ``range(n)`` in ``order`` (default: natural)."""
    idx = np.arange(n) if order is None else np.asarray(order)
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]
