# %% [markdown]
# # Losses, gradients and optimizers
#
# The network engine is plain numpy.  This walk-through builds a small MLP,
# compares the analytic gradient of the distillation loss with finite
# differences, and takes a few optimizer steps.

# %%
import numpy as np

from edgekd import nncore
from edgekd.nncore import LossSpec

model = nncore.init_network([3, 8, 8, 2], seed=0)
print("layer sizes:", model.layer_sizes, "parameters:", model.total_parameter_count())

rng = np.random.default_rng(1)
x = rng.normal(size=(16, 3))
y = rng.integers(0, 2, size=16)

# %% [markdown]
# Temperature flattens the softmax.  At T=10 two logits a few units apart
# give nearly even probabilities.

# %%
logits = np.array([[2.0, -1.0]])
for t in (1.0, 3.0, 10.0):
    print(f"T={t:>4}: {nncore.softmax_temperature(logits, t)[0].round(4)}")

# %% [markdown]
# The distillation loss mixes cross-entropy on the labels with T^2 times
# the KL divergence to the teacher's softened outputs.

# %%
teacher_logits = rng.normal(scale=3, size=(16, 2))
spec = LossSpec.kd(teacher_logits, temperature=10.0, alpha=0.5)
loss, grads = nncore.loss_and_gradients(model, x, y, spec)
print(f"KD loss: {loss:.6f}")

# finite-difference check on one weight
h = 1e-6
w = model.layers[0][0]
w[0, 0] += h
up, _ = nncore.loss_and_gradients(model, x, y, spec)
w[0, 0] -= 2 * h
down, _ = nncore.loss_and_gradients(model, x, y, spec)
w[0, 0] += h
print(f"analytic {grads.layers[0][0][0, 0]:.8f}  numeric {(up - down) / (2 * h):.8f}")

# %% [markdown]
# SGD with momentum, Adam and DP-SGD all return a new model and a new state.

# %%
for name, state in [("sgd", nncore.sgd_momentum(model, lr=0.05)), ("adam", nncore.adam(model, lr=0.01))]:
    m = model
    for _ in range(50):
        _, g = nncore.loss_and_gradients(m, x, y)
        m, state = (nncore.sgd_momentum_step if name == "sgd" else nncore.adam_step)(state, m, g)
    print(f"{name}: cross-entropy after 50 steps {nncore.loss_and_gradients(m, x, y)[0]:.4f}")

state = nncore.dp_sgd(model, lr=0.05, momentum=0.9, clip_norm=1.0, noise_std=0.01)
m = model
for step in range(50):
    _, m, state = nncore.dp_sgd_step(state, m, x, y, LossSpec(), np.random.default_rng(step))
print(f"dp-sgd: cross-entropy after 50 steps {nncore.loss_and_gradients(m, x, y)[0]:.4f}")
