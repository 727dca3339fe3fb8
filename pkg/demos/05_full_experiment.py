# %% [markdown]
# # All seven methods, summary tables
#
# The same runner sits behind the ``edgekd run`` command.  A reduced
# scenario keeps this under a minute; the 20 x 2000 desk-scale setup takes
# about a minute on one core.

# %%
from edgekd import dataio, metrics
from edgekd.config import profile
from edgekd.experiment import METHODS, run_experiment, summarize

scenario = dataio.generate_synthetic_scenario(
    dataio.SyntheticConfig(n_devices=12, frames_per_device=1000), seed=0)
hp = profile("synthetic", teacher_hidden=(128, 128), teacher_epochs=8)
result = run_experiment(scenario, hp, METHODS, seed=0)
views = summarize(scenario, result)

# %%
for row in views["summary"]:
    print(f"{row['method']:9s} edge {row['edge_accuracy']:.4f}  frame {row['frame_accuracy']:.4f}")

# %% [markdown]
# Devices grouped by frame error rate (quartiles), mean accuracy per group.

# %%
for g in views["groups"]:
    accs = "  ".join(f"{m}={a:.3f}" for m, a in g["edge_accuracy"].items())
    print(f"group {g['group']} [{g['lower']:.3f}, {g['upper']:.3f}] n={g['node_count']}: {accs}")

# %%
for d in views["deltas"]:
    print(d["method"], d["buckets"])
print(metrics.BOUNDARY_CONVENTION)
