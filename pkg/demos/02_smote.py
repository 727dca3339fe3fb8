# %% [markdown]
# # SMOTE stand-ins for device data
#
# Each device replaces its training rows with synthetic rows generated per
# class from k-nearest-neighbour pairs.  Every synthetic row lies on the
# line through a real row and one of its neighbours, and the generating
# ratio can be recovered from the output.

# %%
import numpy as np

from edgekd import smote

rng = np.random.default_rng(0)
x = rng.normal(size=(120, 2))
y = (x[:, 0] + 0.5 * x[:, 1] > 0.3).astype(np.int64)

res = smote.generate_synthetic_dataset(x, y, smote.SmoteConfig(k=5), rng=np.random.default_rng(1))
print("real class counts:     ", np.bincount(y))
print("synthetic class counts:", np.bincount(res.y))

# %% [markdown]
# Provenance: solve for r on every coordinate of every sample.

# %%
spreads, rs = [], []
for z, v, w in zip(res.x, x[res.seed_index], x[res.neighbor_index]):
    r, spread = smote.recover_r(z, v, w, res.mode)
    rs.append(r)
    spreads.append(spread)
print(f"r in [{min(rs):.3f}, {max(rs):.3f}], worst coordinate spread {max(spreads):.1e}")

# %% [markdown]
# The default mode steps away from the neighbour (z = v + r(v - w)); the
# standard mode interpolates toward it.  Both stay on the same line.

# %%
v, w = np.array([0.0, 0.0]), np.array([1.0, 2.0])
for mode in smote.MODES:
    print(mode, smote.generate_sample(v, w, 0.25, mode))

# %% [markdown]
# A class with too few members for k neighbours cannot be oversampled.

# %%
try:
    smote.generate_synthetic_dataset(x[:8], np.array([0] * 7 + [1]), smote.SmoteConfig(k=5), rng, device_id="demo")
except Exception as exc:
    print(type(exc).__name__, exc)
