import numpy as np
import pytest

from knobtune.costmodel import (
    CostHyperparams,
    CostModel,
    CostSample,
    cross_validate,
    load_cost_model,
    normalize_perf,
    r_squared,
    train,
)
from knobtune.env import Observation, PerfMetric
from knobtune.errors import DomainError, StoreError
from knobtune.features import METRIC_NAMES
from knobtune.knobspace import Configuration, KnobSpace, KnobSpec


def space1():
    return KnobSpace((KnobSpec(name="k", kind="continuous", min=0.0, max=100.0, default=0.0),))


def obs(wid, value, orientation, v):
    metrics = None
    return Observation(wid, Configuration((v,)),
                       PerfMetric(value, orientation), metrics, source="synthetic")


def feature_map(*wids):
    return {w: (0.5,) * len(METRIC_NAMES) for w in wids}


def test_normalize_perf_two_latencies():
    observations = [obs("w", 10.0, "lower_better", 1.0), obs("w", 40.0, "lower_better", 2.0)]
    samples = normalize_perf(observations, space1(), feature_map("w"))
    by_cfg = {s.input[0]: s.target for s in samples}
    assert by_cfg[1.0 / 100.0] == 1.0   # 10s is best
    assert by_cfg[2.0 / 100.0] == 0.0


def test_normalize_perf_throughputs():
    observations = [obs("w", 100.0, "higher_better", 1.0),
                    obs("w", 150.0, "higher_better", 2.0),
                    obs("w", 200.0, "higher_better", 3.0)]
    samples = normalize_perf(observations, space1(), feature_map("w"))
    assert [s.target for s in samples] == [0.0, 0.5, 1.0]


def test_normalize_perf_degenerate_all_equal():
    observations = [obs("w", 5.0, "lower_better", 1.0), obs("w", 5.0, "lower_better", 2.0)]
    samples = normalize_perf(observations, space1(), feature_map("w"))
    assert all(s.target == 0.5 for s in samples)


def test_normalize_perf_single_observation_warns(caplog):
    with caplog.at_level("WARNING"):
        samples = normalize_perf([obs("w", 5.0, "lower_better", 1.0)], space1(), feature_map("w"))
    assert samples[0].target == 0.5
    assert "single observation" in caplog.text


def test_sample_input_layout():
    samples = normalize_perf([obs("w", 10.0, "lower_better", 50.0),
                              obs("w", 20.0, "lower_better", 60.0)],
                             space1(), feature_map("w"))
    assert len(samples[0].input) == 1 + len(METRIC_NAMES)


def linear_samples(n=120, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, dim))
    w = np.array([0.5, 0.3, 0.15, 0.05])
    y = X @ w  # in [0,1]
    return [CostSample(tuple(x), float(t), workload_id=f"w{i % 10}", orientation="higher_better")
            for i, (x, t) in enumerate(zip(X, y))]


def small_hp():
    return CostHyperparams(boosted_trees=60, bagged_trees=60, seed=1)


def test_train_deterministic_given_seed():
    samples = linear_samples()
    probe = np.random.default_rng(7).uniform(0, 1, size=(20, 4))
    m1 = train(samples, small_hp())
    m2 = train(samples, small_hp())
    assert np.array_equal(m1.predict_batch(probe), m2.predict_batch(probe))


def test_train_linear_oracle_in_sample():
    samples = linear_samples()
    model = train(samples, small_hp())
    X = np.array([s.input for s in samples])
    y = np.array([s.target for s in samples])
    assert r_squared(y, model.predict_batch(X)) >= 0.95


def test_train_rejects_too_few_samples():
    with pytest.raises(DomainError):
        train(linear_samples(n=10))


def test_train_rejects_dim_mismatch():
    samples = linear_samples(n=60)
    bad = CostSample((0.1, 0.2), 0.5, workload_id="x", orientation="higher_better")
    with pytest.raises(DomainError):
        train(samples + [bad])


class _Stub:
    def __init__(self, value):
        self.value = value

    def predict(self, X):
        return np.full(len(X), self.value)


def stub_model(a, b, dim=3):
    return CostModel(boosted=_Stub(a), bagged=_Stub(b), input_dim=dim,
                     hyperparams=CostHyperparams())


def test_predict_is_member_mean():
    model = stub_model(0.4, 0.6)
    assert model.predict((0.0, 0.0, 0.0)) == pytest.approx(0.5)


def test_predict_clamps_and_stays_between_members():
    model = stub_model(1.4, 1.2)
    b, r = model.member_predictions(np.zeros((1, 3)))
    mean = (b[0] + r[0]) / 2
    assert min(b[0], r[0]) <= mean <= max(b[0], r[0])
    assert model.predict((0.0, 0.0, 0.0)) == 1.0


def test_predict_rejects_dim_mismatch():
    with pytest.raises(DomainError):
        stub_model(0.1, 0.2).predict((0.0,))


def test_r_squared_definition():
    y = np.array([0.1, 0.4, 0.9])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, y.mean())) == 0.0


def test_cost_sample_target_bounds():
    with pytest.raises(DomainError):
        CostSample((0.1,), 1.5, workload_id="w", orientation="higher_better")


def test_cross_validate_by_workload_disjoint_and_covering():
    samples = linear_samples(n=100)
    report = cross_validate(samples, k=5, seed=3, hyperparams=small_hp())
    assert len(report.fold_r2) == 5
    assert report.mean_r2 == pytest.approx(float(np.mean(report.fold_r2)))


def test_cross_validate_rejects_k_above_workloads():
    samples = linear_samples(n=100)  # 10 workloads
    with pytest.raises(DomainError):
        cross_validate(samples, k=11)


def test_save_load_roundtrip(tmp_path):
    model = train(linear_samples(), small_hp())
    path = tmp_path / "cost.bin"
    model.save(path)
    loaded = load_cost_model(path)
    probe = np.random.default_rng(3).uniform(0, 1, size=(5, 4))
    assert np.array_equal(model.predict_batch(probe), loaded.predict_batch(probe))


def test_load_rejects_bad_payload(tmp_path):
    path = tmp_path / "junk.bin"
    import pickle

    with open(path, "wb") as fh:
        pickle.dump({"format": "other", "version": 9}, fh)
    with pytest.raises(StoreError):
        load_cost_model(path)
