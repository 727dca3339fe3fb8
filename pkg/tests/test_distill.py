import dataclasses

import numpy as np
import pytest

from edgekd import dataio, distill, metrics, nncore
from edgekd.dataio import Scenario
from edgekd.distill import CloudAudit, KdConfig
from edgekd.errors import ConfigError, ShapeError
from edgekd.rng import stream
from edgekd.smote import SmoteConfig, recover_r
from edgekd.training import ShuffleKey, TeacherGuidance, fit
from helpers import blob_scenario, ring_scenario, single_device

CFG = KdConfig(student_hidden=(8, 8), teacher_hidden=(16, 16), batch_size=16, student_lr=0.01, teacher_lr=1e-3,
               local_epochs=3, teacher_epochs=3, kd_epochs=3, finetune_epochs=2)


def _accuracy(model, split):
    return float(np.mean(nncore.predict(model, split.x) == split.y))


def _linear_scenario(n=600, seed=0):
    """Labels from a fixed hyperplane; returns the scenario and an exact oracle teacher."""
    rng = np.random.default_rng(seed)
    w = np.array([1.0, -2.0, 0.5])
    x = rng.normal(size=(n, 3)) * [1.0, 2.0, 0.5] + [0.3, -0.1, 2.0]
    margin = x @ w
    keep = np.abs(margin) > 0.2
    x, y = x[keep], (margin[keep] > 0).astype(np.int64)
    sc = dataio.build_scenario([("lin", x, y)], "synthetic", ["a", "b", "c"], split="random", split_seed=0)
    # raw = z * std + mean, so the same hyperplane in normalized coordinates
    s, m = sc.normalization.std, sc.normalization.mean
    wz, bz = s * w, m @ w
    scale = 5.0
    teacher = nncore.ModelWeights([(scale * np.stack([-wz, wz]), scale * np.array([-bz, bz]))])
    return sc, teacher


def test_oracle_teacher_is_perfect():
    sc, teacher = _linear_scenario()
    assert _accuracy(teacher, sc.devices[0].train) == 1.0


def test_train_local_zero_epochs_is_init():
    sc = blob_scenario(n_devices=1)
    m = distill.train_local(sc.devices[0], CFG, seed=3, epochs=0)
    init = nncore.init_network(CFG.student_sizes(3), stream(3, "init", "student"))
    assert m.equals(init)


def test_train_local_deterministic():
    sc = blob_scenario(n_devices=1)
    a = distill.train_local(sc.devices[0], CFG, seed=3)
    assert a.equals(distill.train_local(sc.devices[0], CFG, seed=3))
    assert not a.equals(distill.train_local(sc.devices[0], CFG, seed=4))


def test_train_local_separable():
    sc, _ = _linear_scenario()
    m = distill.train_local(sc.devices[0], dataclasses.replace(CFG, local_epochs=30), seed=0)
    assert _accuracy(m, sc.devices[0].test) > 0.95


def test_pool_real_and_smote():
    sc = blob_scenario(n_devices=2, frames=200)
    real = distill.pool_training_data(sc, "real")
    assert real.x.shape == (200, 3) and not real.synthetic.any()
    smote_cfg = SmoteConfig(k=5)
    synth = distill.device_smote(sc, smote_cfg, seed=0)
    pool = distill.pool_training_data(sc, "smote", smote_cfg, synthetic=synth)
    assert pool.x.shape == (200, 3) and pool.synthetic.all()
    for i, d in enumerate(sc.devices):
        res = synth[i]
        assert np.array_equal(np.bincount(res.y, minlength=2), np.bincount(d.train.y, minlength=2))
        v, w = d.train.x[res.seed_index], d.train.x[res.neighbor_index]
        for z, vi, wi in zip(res.x, v, w):
            r, spread = recover_r(z, vi, wi, res.mode)
            assert 0 <= r <= 1 and spread < 1e-9


def test_pool_single_device_is_its_data():
    sc = single_device(blob_scenario(n_devices=3))
    pool = distill.pool_training_data(sc, "real")
    np.testing.assert_array_equal(pool.x, sc.devices[0].train.x)
    np.testing.assert_array_equal(pool.y, sc.devices[0].train.y)


def test_pool_bad_source():
    with pytest.raises(ConfigError):
        distill.pool_training_data(blob_scenario(n_devices=1), "mixed")


def test_teacher_zero_epochs_and_determinism():
    pool = distill.pool_training_data(blob_scenario(n_devices=2), "real")
    t0 = distill.train_teacher(pool, CFG, seed=1, epochs=0)
    assert t0.model.equals(nncore.init_network(CFG.teacher_sizes(3), stream(1, "init", "teacher")))
    a, b = distill.train_teacher(pool, CFG, seed=1), distill.train_teacher(pool, CFG, seed=1)
    assert a.model.equals(b.model) and a.epoch_losses == b.epoch_losses
    assert len(a.epoch_losses) == CFG.teacher_epochs


def test_teacher_capacity_beats_small_student():
    sc = ring_scenario()
    cfg = dataclasses.replace(CFG, teacher_hidden=(64, 64), student_hidden=(2,), teacher_epochs=60,
                              local_epochs=60, teacher_lr=3e-3)
    pool = distill.pool_training_data(sc, "real")
    teacher = distill.train_teacher(pool, cfg, seed=0).model
    student = distill.train_local(sc.devices[0], cfg, seed=0)
    t_acc = float(np.mean(nncore.predict(teacher, pool.x) == pool.y))
    s_acc = float(np.mean(nncore.predict(student, pool.x) == pool.y))
    assert t_acc > s_acc + 0.05


def test_kd_alpha_one_equals_local():
    sc = blob_scenario(n_devices=1, seed=4)
    cfg = dataclasses.replace(CFG, alpha=1.0, kd_epochs=CFG.local_epochs)
    teacher = nncore.init_network(CFG.teacher_sizes(3), 9)
    d = sc.devices[0]
    assert distill.train_student_kd(d.train.x, d.train.y, teacher, cfg, seed=2).equals(
        distill.train_local(d, cfg, seed=2))


def test_kd_with_oracle_teacher_matches_plain_student():
    sc, teacher = _linear_scenario(seed=1)
    d = sc.devices[0]
    cfg = dataclasses.replace(CFG, alpha=0.5, local_epochs=20, kd_epochs=20)
    kd = distill.train_student_kd(d.train.x, d.train.y, teacher, cfg, seed=0)
    plain = distill.train_local(d, cfg, seed=0)
    assert _accuracy(kd, d.test) >= _accuracy(plain, d.test) - 0.02


def test_temperature_changes_first_step_loss():
    sc = blob_scenario(n_devices=1)
    d = sc.devices[0]
    teacher = nncore.init_network(CFG.teacher_sizes(3), 9)
    student = nncore.init_network(CFG.student_sizes(3), 1)
    losses = []
    for t in (1.0, 10.0):
        res = fit(student, nncore.sgd_momentum(student, 0.01), d.train.x, d.train.y, epochs=1,
                          batch_size=16, key=ShuffleKey(0, "student"), guidance=TeacherGuidance(teacher, t, 0.5))
        losses.append(res.step_losses[0])
    assert abs(losses[0] - losses[1]) > 1e-9


def test_teacher_not_modified_by_students():
    sc = blob_scenario(n_devices=3)
    teacher = distill.train_teacher(distill.pool_training_data(sc, "real"), CFG, seed=0)
    before = teacher.model.copy()
    distill.run_kd_pipeline(sc, "kd_scr", CFG, seed=0, teacher=teacher)
    assert teacher.model.equals(before)


def test_dimension_mismatch():
    sc = blob_scenario(n_devices=1)
    d = sc.devices[0]
    with pytest.raises(ShapeError):
        distill.train_student_kd(d.train.x, d.train.y, nncore.init_network([4, 5, 2], 0), CFG, seed=0)


def test_kd_scr_alpha_one_equals_local_report():
    sc = blob_scenario(n_devices=3, seed=6)
    cfg = dataclasses.replace(CFG, alpha=1.0, kd_epochs=CFG.local_epochs)
    local, local_models = distill.run_local(sc, cfg, seed=5)
    kd = distill.run_kd_pipeline(sc, "kd_scr", cfg, seed=5)
    assert all(a.equals(b) for a, b in zip(local_models, kd.students))
    for a, b in zip(local.devices, kd.report.devices):
        np.testing.assert_array_equal(a.predictions, b.predictions)


def test_tf_kd_zero_finetune_equals_stage_one():
    sc = blob_scenario(n_devices=2)
    cfg = dataclasses.replace(CFG, finetune_epochs=0)
    run = distill.run_kd_pipeline(sc, "tf_kd", cfg, seed=0)
    synth = distill.device_smote(sc, cfg.smote, seed=0)
    for i, student in enumerate(run.students):
        stage1 = distill.train_student_kd(synth[i].x, synth[i].y, run.teacher.model, cfg, seed=0, device_index=i,
                                          phase="smote-kd")
        assert student.equals(stage1)


def test_tf_kd_stage_composition():
    sc = blob_scenario(n_devices=2)
    run = distill.run_kd_pipeline(sc, "tf_kd", CFG, seed=0)
    synth = distill.device_smote(sc, CFG.smote, seed=0)
    for i, d in enumerate(sc.devices):
        stage1 = distill.train_student_kd(synth[i].x, synth[i].y, run.teacher.model, CFG, seed=0, device_index=i,
                                          phase="smote-kd")
        assert run.students[i].equals(distill.finetune(stage1, d.train.x, d.train.y, CFG, seed=0, device_index=i))


@pytest.mark.parametrize("variant", ["kd_smote", "tf_kd"])
def test_privacy_audit(variant):
    sc = blob_scenario(n_devices=3)
    audit = CloudAudit()
    run = distill.run_kd_pipeline(sc, variant, CFG, seed=0, audit=audit)
    assert audit.records and audit.real_rows == 0
    cloud = {tuple(r) for r in audit.rows()}
    real = {tuple(r) for d in sc.devices for r in np.vstack([d.train.x, d.test.x])}
    assert not cloud & real
    assert run.report.notes["teacher_source"] == "smote"


def test_kd_scr_audit_sees_real_rows():
    sc = blob_scenario(n_devices=2)
    audit = CloudAudit()
    distill.run_kd_pipeline(sc, "kd_scr", CFG, seed=0, audit=audit)
    assert audit.real_rows > 0


def test_smote_failure_falls_back_to_local(caplog):
    sc = blob_scenario(n_devices=3, seed=1)
    d = sc.devices[1]
    bad = dataclasses.replace(d, train=dataio.Split(d.train.x, np.zeros_like(d.train.y)))
    y = bad.train.y.copy()
    y[:2] = 1  # two minority rows: too few for k=5 neighbours
    bad = dataclasses.replace(bad, train=dataio.Split(bad.train.x, y))
    sc = Scenario(sc.tag, (sc.devices[0], bad, sc.devices[2]), sc.feature_names, sc.normalization)
    run = distill.run_kd_pipeline(sc, "kd_smote", CFG, seed=0)
    assert run.report.fallback_devices == [bad.device_id]
    assert run.students[1].equals(distill.train_local(bad, CFG, seed=0, device_index=1))
    assert "falls back" in caplog.text


def test_unknown_variant():
    with pytest.raises(ConfigError):
        distill.run_kd_pipeline(blob_scenario(n_devices=1), "kd_magic", CFG, seed=0)


def test_students_threaded_same_as_serial():
    sc = blob_scenario(n_devices=4)
    a = distill.run_kd_pipeline(sc, "tf_kd", CFG, seed=0, threads=1)
    b = distill.run_kd_pipeline(sc, "tf_kd", CFG, seed=0, threads=3)
    assert all(x.equals(y) for x, y in zip(a.students, b.students))


def test_weights_persist(tmp_path):
    sc = blob_scenario(n_devices=1)
    teacher = distill.train_teacher(distill.pool_training_data(sc, "real"), CFG, seed=0).model
    nncore.save_weights(teacher, tmp_path / "t.bin")
    assert nncore.load_weights(tmp_path / "t.bin").equals(teacher)


def test_reports_share_test_splits():
    sc = blob_scenario(n_devices=3)
    local, _ = distill.run_local(sc, CFG, seed=0)
    kd = distill.run_kd_pipeline(sc, "kd_smote", CFG, seed=0).report
    for a, b in zip(local.devices, kd.devices):
        assert a.device_id == b.device_id
        np.testing.assert_array_equal(a.labels, b.labels)
    assert metrics.edge_accuracy(kd) > 0.5
