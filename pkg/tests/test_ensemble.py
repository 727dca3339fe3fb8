import itertools

import numpy as np
import pytest

from edgekd import metrics
from edgekd.ensemble import majority_vote, run_ensemble, vote_arrays
from edgekd.errors import ProtocolError
from edgekd.metrics import DeviceResult, MethodReport


@pytest.mark.parametrize("votes,out", [((0, 0, 1), 0), ((1, 1, 1), 1), ((1, 0, 1), 1), ((0, 0, 0), 0)])
def test_majority_vote(votes, out):
    assert majority_vote(votes) == out


@pytest.mark.parametrize("votes", [(0, 1), (0, 1, 1, 0), (0, 2, 1)])
def test_majority_vote_rejects(votes):
    with pytest.raises(ProtocolError):
        majority_vote(votes)


def test_vote_arrays_all_patterns():
    pats = np.array(list(itertools.product([0, 1], repeat=3)))
    out = vote_arrays(pats[:, 0], pats[:, 1], pats[:, 2])
    assert out.tolist() == [majority_vote(p) for p in pats]


def _random_reports(seed, devices=5, frames=200):
    rng = np.random.default_rng(seed)
    labels = [rng.integers(0, 2, frames) for _ in range(devices)]
    reps = []
    for name in ("local", "dpfed", "kd_smote"):
        reps.append(MethodReport(name, [DeviceResult(f"d{i}", rng.integers(0, 2, frames), labels[i])
                                        for i in range(devices)]))
    return reps


def test_vote_oracle_1000_frames():
    reps = _random_reports(0, devices=1, frames=1000)
    ens = run_ensemble(reps)
    preds = [r.devices[0].predictions for r in reps]
    oracle = [1 if preds[0][j] + preds[1][j] + preds[2][j] >= 2 else 0 for j in range(1000)]
    assert ens.devices[0].predictions.tolist() == oracle
    labels = reps[0].devices[0].labels
    assert ens.devices[0].accuracy == sum(o == l for o, l in zip(oracle, labels)) / 1000


def test_identical_members():
    rep = _random_reports(1)[0]
    ens = run_ensemble([rep, rep, rep])
    for a, b in zip(rep.devices, ens.devices):
        np.testing.assert_array_equal(a.predictions, b.predictions)


def test_two_right_one_wrong():
    labels = np.array([0, 1, 1, 0, 1])
    right = MethodReport("a", [DeviceResult("d", labels, labels)])
    wrong = MethodReport("b", [DeviceResult("d", 1 - labels, labels)])
    assert metrics.edge_accuracy(run_ensemble([right, wrong, right])) == 1.0


def test_member_permutation_symmetry():
    reps = _random_reports(2)
    base = run_ensemble(reps)
    for perm in itertools.permutations(reps):
        out = run_ensemble(list(perm))
        for a, b in zip(base.devices, out.devices):
            np.testing.assert_array_equal(a.predictions, b.predictions)


def test_misalignment_errors():
    reps = _random_reports(3)
    short = MethodReport("x", reps[2].devices[:-1])
    with pytest.raises(ProtocolError):
        run_ensemble([reps[0], reps[1], short])
    d = reps[2].devices[0]
    flipped = MethodReport("x", [DeviceResult(d.device_id, d.predictions, 1 - d.labels), *reps[2].devices[1:]])
    with pytest.raises(ProtocolError):
        run_ensemble([reps[0], reps[1], flipped])
    with pytest.raises(ProtocolError):
        run_ensemble(reps[:2])


def test_fallback_flag_propagates():
    reps = _random_reports(4, devices=2)
    d = reps[2].devices[1]
    reps[2].devices[1] = DeviceResult(d.device_id, d.predictions, d.labels, fallback=True)
    assert run_ensemble(reps).fallback_devices == ["d1"]
