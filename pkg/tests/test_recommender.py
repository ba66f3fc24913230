import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knobtune.datagen import TrainingSample
from knobtune.env import PerfMetric
from knobtune.errors import DomainError, ParseError
from knobtune.features import METRIC_NAMES, InternalMetrics, WorkloadFeatures
from knobtune.knobspace import BucketedConfiguration, KnobSpace, KnobSpec, bucket_to_value
from knobtune.recommender import (
    ClassifierPredictor,
    RemotePredictor,
    greedy_recommend,
    load_predictor,
    parse_lm_output,
    recommend,
    render_lm_output,
    sample_bucket,
    soften,
    train_classifier,
)


def space_of(n):
    return KnobSpace(tuple(
        KnobSpec(name=f"k{i}", kind="continuous", min=0.0, max=100.0, default=15.0)
        for i in range(n)))


def metrics_zero():
    return InternalMetrics(**{name: 0.0 for name in METRIC_NAMES})


def features_with_vector(vec):
    from knobtune.features import PlanTree, WorkloadStatistics, build_input_sequence

    stats = WorkloadStatistics(total_statements=1, read_statements=1)
    plans = (PlanTree("SeqScan", 1.0),)
    m = metrics_zero()
    return WorkloadFeatures(stats=stats, plans=plans, metrics=m,
                            text=build_input_sequence(stats, plans, m),
                            vector=tuple(vec))


def make_samples(space, labels_fn, n=60, seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        vec = tuple(float(v) for v in rng.uniform(0, 1, size=len(METRIC_NAMES)))
        buckets = labels_fn(vec, i)
        samples.append(TrainingSample(
            workload_id=f"w{i:03d}", feature_text="t", feature_vector=vec,
            label=BucketedConfiguration(tuple(buckets)),
            perf_default=PerfMetric(100.0, "lower_better"),
            perf_tuned=PerfMetric(50.0, "lower_better"),
            label_source="cost_model", benchmark="fam"))
    return samples


def small_trees(space, samples, seed=0):
    return train_classifier(samples, space, seed=seed, trees=30, depth=10)


# --- training -----------------------------------------------------------------

def test_constant_knob_always_greedy_emits_it():
    space = space_of(2)
    samples = make_samples(space, lambda vec, i: (7, i % 10))
    model = small_trees(space, samples)
    predictor = ClassifierPredictor(model)
    out = predictor.greedy(features_with_vector(samples[0].feature_vector))
    assert out.buckets[0] == 7


def test_retrain_same_seed_identical():
    space = space_of(3)
    samples = make_samples(space, lambda vec, i: (int(vec[0] * 9.99), 3, i % 10))
    m1 = small_trees(space, samples, seed=5)
    m2 = small_trees(space, samples, seed=5)
    probe = features_with_vector((0.4,) * len(METRIC_NAMES))
    assert np.array_equal(m1.probability_table(probe.vector), m2.probability_table(probe.vector))


def test_train_rejects_too_few():
    space = space_of(1)
    samples = make_samples(space, lambda vec, i: (1,), n=5)
    with pytest.raises(DomainError):
        train_classifier(samples, space, seed=0)


def test_probability_rows_sum_to_one():
    space = space_of(3)
    samples = make_samples(space, lambda vec, i: (int(vec[0] * 9.99), 7, i % 10))
    model = small_trees(space, samples)
    table = model.probability_table((0.3,) * len(METRIC_NAMES))
    assert table.shape == (3, 10)
    assert np.allclose(table.sum(axis=1), 1.0, atol=1e-6)


def test_save_load_roundtrip(tmp_path):
    space = space_of(2)
    samples = make_samples(space, lambda vec, i: (int(vec[0] * 9.99), i % 10))
    model = small_trees(space, samples)
    path = tmp_path / "predictor.bin"
    model.save(path)
    loaded = load_predictor(path)
    probe = (0.6,) * len(METRIC_NAMES)
    assert np.array_equal(model.probability_table(probe), loaded.probability_table(probe))


# --- sampling ------------------------------------------------------------------

def test_temperature_zero_equals_greedy():
    space = space_of(3)
    samples = make_samples(space, lambda vec, i: (int(vec[0] * 9.99), 3, i % 10))
    predictor = ClassifierPredictor(small_trees(space, samples))
    f = features_with_vector((0.2,) * len(METRIC_NAMES))
    rng = np.random.default_rng(0)
    assert predictor.sample(f, 0.0, rng) == predictor.greedy(f)


def test_one_hot_any_temperature():
    p = np.zeros(10)
    p[4] = 1.0
    rng = np.random.default_rng(1)
    for temperature in (0.0, 0.5, 1.0, 3.0):
        assert sample_bucket(p, temperature, rng) == 4


def test_temperature_one_is_unbiased():
    # multinomial statistics: empirical frequencies within 3 sigma of expected
    p = np.array([0.05, 0.1, 0.0, 0.2, 0.15, 0.05, 0.05, 0.1, 0.25, 0.05])
    rng = np.random.default_rng(7)
    n = 1000
    draws = np.bincount([sample_bucket(p, 1.0, rng) for _ in range(n)], minlength=10)
    for b in range(10):
        expected = n * p[b]
        sigma = np.sqrt(n * p[b] * (1 - p[b]))
        assert abs(draws[b] - expected) <= max(3 * sigma, 1e-9), f"bucket {b}"


def test_soften_sharpens_below_one():
    p = np.array([0.3, 0.7] + [0.0] * 8)
    sharp = soften(p, 0.25)
    assert sharp[1] > 0.96
    assert soften(p, 1.0) == pytest.approx(p)


def test_soften_rejects_negative_temperature():
    with pytest.raises(DomainError):
        soften(np.ones(10) / 10, -1.0)


# --- parse / render ---------------------------------------------------------------

def test_parse_worked_example():
    space = KnobSpace((KnobSpec(name="max_wal_senders", kind="integer", min=0, max=256, default=10),))
    out = parse_lm_output("max_wal_senders: 30% to 40%", space)
    assert out.buckets == (3,)


def test_parse_empty_text_errors():
    with pytest.raises(ParseError):
        parse_lm_output("", space_of(1))


def test_parse_error_cases_name_the_line():
    space = space_of(2)
    with pytest.raises(ParseError, match="missing"):
        parse_lm_output("k0: 10% to 20%", space)
    with pytest.raises(ParseError, match="duplicate"):
        parse_lm_output("k0: 10% to 20%\nk0: 20% to 30%\nk1: 0% to 10%", space)
    with pytest.raises(ParseError, match="unknown"):
        parse_lm_output("k0: 10% to 20%\nzz: 0% to 10%", space)
    with pytest.raises(ParseError, match="decile"):
        parse_lm_output("k0: 10% to 30%\nk1: 0% to 10%", space)
    with pytest.raises(ParseError, match="decile"):
        parse_lm_output("k0: 15% to 25%\nk1: 0% to 10%", space)
    with pytest.raises(ParseError, match="malformed"):
        parse_lm_output("k0 equals buckets\nk1: 0% to 10%", space)


@settings(max_examples=150)
@given(buckets=st.lists(st.integers(min_value=0, max_value=9), min_size=1, max_size=12))
def test_parse_render_roundtrip(buckets):
    space = space_of(len(buckets))
    bcfg = BucketedConfiguration(tuple(buckets))
    assert parse_lm_output(render_lm_output(bcfg, space), space) == bcfg


def test_parse_is_order_insensitive():
    space = space_of(3)
    text = "k2: 90% to 100%\nk0: 0% to 10%\nk1: 50% to 60%"
    assert parse_lm_output(text, space).buckets == (0, 5, 9)


# --- remote backend ------------------------------------------------------------

class StubTransport:
    def __init__(self, completions):
        self.completions = completions
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        return {"completions": self.completions[:request["n"]]}


def test_remote_predictor_parses_completions():
    space = space_of(2)
    good = render_lm_output(BucketedConfiguration((3, 8)), space)
    transport = StubTransport([good, "garbage", good])
    predictor = RemotePredictor(transport, space)
    f = features_with_vector((0.5,) * len(METRIC_NAMES))
    out = predictor.sample_batch(f, 1.0, 3, rng=None)
    assert len(out) == 2  # the garbage completion is dropped
    assert transport.requests[0] == {"prompt": f.text, "temperature": 1.0, "n": 3}


def test_remote_predictor_all_unparseable_raises():
    space = space_of(2)
    predictor = RemotePredictor(StubTransport(["junk", "also junk"]), space)
    f = features_with_vector((0.5,) * len(METRIC_NAMES))
    with pytest.raises(ParseError, match="unparseable"):
        predictor.sample_batch(f, 1.0, 2, rng=None)


# --- recommend -------------------------------------------------------------------

class FixedPredictor:
    def __init__(self, outputs):
        self.outputs = outputs

    def greedy(self, features):
        return self.outputs[0]

    def sample_batch(self, features, temperature, k, rng):
        return (self.outputs * k)[:k]


class ScoreByFirstKnob:
    """Stub cost model scoring by the first input component."""

    def predict_batch(self, X):
        return np.asarray(X)[:, 0]


def test_recommend_picks_highest_scored_candidate():
    space = space_of(2)
    low = BucketedConfiguration((2, 2))   # first knob fraction 0.25
    high = BucketedConfiguration((9, 2))  # first knob fraction 0.95
    predictor = FixedPredictor([low, high])
    f = features_with_vector((0.5,) * len(METRIC_NAMES))
    result = recommend(f, predictor, ScoreByFirstKnob(), space, k=2, temperature=1.0,
                       rng=np.random.default_rng(0))
    assert result.configuration == bucket_to_value(space, high)
    assert result.predicted_score == max(result.scores)
    assert result.configuration in [bucket_to_value(space, c) for c in result.candidates]


def test_recommend_tie_breaks_earliest():
    space = space_of(2)
    a = BucketedConfiguration((5, 1))
    b = BucketedConfiguration((5, 8))  # same first-knob score
    predictor = FixedPredictor([a, b])
    f = features_with_vector((0.5,) * len(METRIC_NAMES))
    result = recommend(f, predictor, ScoreByFirstKnob(), space, k=2,
                       rng=np.random.default_rng(0))
    assert result.configuration == bucket_to_value(space, a)


def test_recommend_k1_zero_temperature_is_greedy_decode():
    space = space_of(3)
    samples = make_samples(space, lambda vec, i: (int(vec[0] * 9.99), 3, i % 10))
    predictor = ClassifierPredictor(small_trees(space, samples))
    f = features_with_vector((0.2,) * len(METRIC_NAMES))
    result = recommend(f, predictor, ScoreByFirstKnob(), space, k=1, temperature=0.0,
                       rng=np.random.default_rng(0))
    assert result.configuration == greedy_recommend(f, predictor, space)


def test_recommend_rejects_bad_k():
    space = space_of(1)
    with pytest.raises(DomainError):
        recommend(features_with_vector((0.5,) * 14), FixedPredictor([BucketedConfiguration((1,))]),
                  ScoreByFirstKnob(), space, k=0)
