"""Small scenario builders shared by the test modules."""
import numpy as np

from edgekd import dataio


def blob_scenario(n_devices=4, frames=200, n_features=3, seed=0, margin=3.0, flip=0.0, tag="synthetic"):
    """Two Gaussian blobs per device, class 1 shifted by ``margin`` along every axis."""
    rng = np.random.default_rng(seed)
    raw = []
    for d in range(n_devices):
        y = (rng.uniform(size=frames) < 0.35).astype(np.int64)
        x = rng.normal(size=(frames, n_features)) + margin * y[:, None] / np.sqrt(n_features)
        x += rng.normal(scale=0.3, size=n_features)  # per-device offset
        if flip:
            y = np.where(rng.uniform(size=frames) < flip, 1 - y, y)
        raw.append((f"dev{d:02d}", x, y))
    return dataio.build_scenario(raw, tag, [f"f{i}" for i in range(n_features)])


def ring_scenario(frames=1200, seed=0):
    """One device whose class is 1 inside a ring: not linearly separable."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=(frames, 2))
    r = np.hypot(x[:, 0], x[:, 1])
    y = ((r > 0.8) & (r < 1.6)).astype(np.int64)
    return dataio.build_scenario([("ring", x, y)], "synthetic", ["a", "b"], split="random", split_seed=1)


def single_device(scenario, i=0):
    return dataio.Scenario(scenario.tag, (scenario.devices[i],), scenario.feature_names, scenario.normalization,
                           scenario.notes)


class SpySplit:
    """Stands in for a test split and logs every read of its arrays."""

    def __init__(self, split, log):
        self._split, self._log = split, log

    @property
    def x(self):
        self._log.append("x")
        return self._split.x

    @property
    def y(self):
        self._log.append("y")
        return self._split.y

    @property
    def n(self):
        return self._split.n


# hand-chosen per-device accuracy deltas (percentage points, 20 test frames each)
HAND_DELTAS = (-30, -25, -20, -15, -5, 0, 5, 15, 25, 30)
# by hand: <-25 | [-25,-15) | [-15,-5) | [-5,5) | [5,15) | [15,25) | >=25
HAND_BUCKETS = (1, 2, 1, 2, 1, 1, 2)
HAND_RATES = (0.10, 0.50, 0.31, 0.25, 0.75, 0.42, 0.05, 0.60, 0.25, 0.90)


def hand_reports():
    """Local and a method report on 10 devices with the deltas above; local gets 10/20 right."""
    from edgekd.metrics import DeviceResult, MethodReport

    labels = np.array([0, 1] * 10)
    local, method = [], []
    for i, delta in enumerate(HAND_DELTAS):
        dev = f"n{i}"
        local.append(DeviceResult(dev, np.where(np.arange(20) < 10, labels, 1 - labels), labels))
        good = 10 + delta // 5
        method.append(DeviceResult(dev, np.where(np.arange(20) < good, labels, 1 - labels), labels))
    return MethodReport("local", local), MethodReport("kd_smote", method)


def hand_rates():
    return {f"n{i}": r for i, r in enumerate(HAND_RATES)}
