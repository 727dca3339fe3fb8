# %% [markdown]
# # Cloud teacher, device students
#
# KD-Scr trains the teacher on pooled real data.  KD-SMOTE and TF-KD train
# it on pooled SMOTE data only, and an audit records every row the cloud
# touches.

# %%
from edgekd import dataio, distill, metrics
from edgekd.distill import CloudAudit, KdConfig

scenario = dataio.generate_synthetic_scenario(
    dataio.SyntheticConfig(n_devices=8, frames_per_device=800), seed=1)
cfg = KdConfig(teacher_hidden=(64, 64), local_epochs=15, kd_epochs=15, teacher_epochs=8,
               finetune_epochs=8, alpha=0.5, teacher_lr=1e-3)

local, _ = distill.run_local(scenario, cfg, seed=0)
print(f"local     {metrics.edge_accuracy(local):.4f}")

# %%
audits = {}
for variant in distill.VARIANTS:
    audits[variant] = CloudAudit()
    run = distill.run_kd_pipeline(scenario, variant, cfg, seed=0, audit=audits[variant])
    print(f"{variant:9s} {metrics.edge_accuracy(run.report):.4f}  "
          f"cloud rows {audits[variant].total_rows}, of which real {audits[variant].real_rows}")

# %% [markdown]
# Per-device gains against Local, bucketed in percentage points.

# %%
print(metrics.accuracy_delta_table(run.report, local))
