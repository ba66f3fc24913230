import numpy as np
import pytest

from knobtune.costmodel import CostHyperparams, CostSample, train
from knobtune.datagen import (
    LlmQueryGenerator,
    PromptSpec,
    QueryTemplate,
    TemplateQueryGenerator,
    TrainingSample,
    build_prompt,
    collect_labels,
    collect_observations,
    default_query_templates,
    default_syntax_check,
    generate_olap_workloads,
    generate_oltp_workloads,
    load_observations,
    load_training_samples,
    load_workloads,
    parse_completion_queries,
    save_observations,
    save_training_samples,
    save_workloads,
)
from knobtune.env import PerfMetric, SyntheticEnv, oriented_score, synthetic_metric_ranges
from knobtune.errors import DomainError, GenerationError
from knobtune.features import METRIC_NAMES
from knobtune.instances import make_instance, transaction_templates
from knobtune.knobspace import BucketedConfiguration, KnobSpace, KnobSpec
from knobtune.seeding import rng_for
from knobtune.tuner import verify_against_default


def small_space(n=3):
    return KnobSpace(tuple(
        KnobSpec(name=f"k{i}", kind="continuous", min=0.0, max=100.0, default=15.0)
        for i in range(n)))


def no_runtime_limit(query):
    return 0.0


# --- prompt ------------------------------------------------------------------

def test_prompt_has_all_six_sections():
    instance = make_instance("fam_a", "OLAP", 8, seed=1)
    prompt = build_prompt(instance, rng_for("t", 0), exemplar_queries=["SELECT 1 FROM x"])
    text = prompt.render()
    for marker in ("## Task Overview", "## Database Schema", "## Guidance for Query Generation",
                   "## Predicate Generation Aid", "## Sample Queries", "## Output Format"):
        assert marker in text


def test_prompt_schema_subset_capped():
    instance = make_instance("fam_a", "OLAP", 12, seed=1)
    for s in range(20):
        prompt = build_prompt(instance, rng_for("cap", s), max_tables=4)
        assert prompt.database_schema.count("CREATE TABLE") <= 4


def test_prompt_subsets_vary_across_seeds():
    # combinatorial estimate verified by simulation: on a 20-table schema two
    # seeds should pick different subsets at least 90% of the time
    instance = make_instance("fam_a", "OLAP", 20, seed=1)
    differing = 0
    trials = 100
    for s in range(trials):
        a = build_prompt(instance, rng_for("div", s, "a")).database_schema
        b = build_prompt(instance, rng_for("div", s, "b")).database_schema
        differing += a != b
    assert differing >= 0.9 * trials


def test_prompt_rejects_empty_section():
    with pytest.raises(DomainError):
        PromptSpec(task_overview="x", database_schema="", generation_guidance="x",
                   predicate_aid="x", sample_queries="x", output_format="x")


# --- generators ----------------------------------------------------------------

def test_stub_generator_filters_invalid_keeps_valid(caplog):
    class Stub:
        def __init__(self):
            self.queries = ["FNORD * FROM", "SELECT a FROM accounts WHERE a > 1"]

        def propose(self, n):
            out, self.queries = self.queries, []
            return out

        def repair(self, query, error):
            return None

    instance = make_instance("fam_a", "OLAP", 6, seed=1)
    with caplog.at_level("INFO"):
        workloads = generate_olap_workloads(instance, Stub(), count=1, workload_size=1,
                                            runtime_estimate=no_runtime_limit)
    assert len(workloads) == 1
    assert workloads[0].queries == ("SELECT a FROM accounts WHERE a > 1",)
    assert "rejected query" in caplog.text


def test_template_two_slots_enumeration_oracle():
    template = QueryTemplate(
        text="SELECT a FROM t WHERE a > {x} LIMIT {y}",
        slots={"x": (1, 2, 3, 4, 5), "y": (10, 20, 30, 40, 50)},
    )
    gen = TemplateQueryGenerator([template], seed=0)
    produced = set(gen.propose(400))
    # enumeration oracle: at most 5 * 5 distinct fillings, every one valid
    assert len(produced) <= 25
    assert all(default_syntax_check(q) is None for q in produced)


def test_generation_error_lists_reasons():
    class Hopeless:
        def propose(self, n):
            return ["BROKEN ((" for _ in range(n)]

        def repair(self, query, error):
            return None

    instance = make_instance("fam_a", "OLAP", 6, seed=1)
    with pytest.raises(GenerationError, match="quality control"):
        generate_olap_workloads(instance, Hopeless(), count=1, workload_size=2,
                                runtime_estimate=no_runtime_limit, max_rounds=2)


def test_runtime_threshold_discards():
    class Stub:
        def __init__(self):
            self.next_id = 0

        def propose(self, n):
            start = self.next_id
            self.next_id += n
            return [f"SELECT a FROM t WHERE a > {i}" for i in range(start, start + n)]

        def repair(self, query, error):
            return None

    def estimator(query):
        return 120.0 if query.endswith("> 0") else 1.0

    instance = make_instance("fam_a", "OLAP", 6, seed=1)
    workloads = generate_olap_workloads(instance, Stub(), count=1, workload_size=3,
                                        runtime_estimate=estimator, max_query_seconds=60.0)
    assert all(not q.endswith("> 0") for q in workloads[0].queries)


def test_llm_generator_repair_round():
    calls = {"n": 0}

    def client(prompt):
        calls["n"] += 1
        if "failed validation" in prompt:
            return "SELECT a FROM fixed_table WHERE a > 1;"
        return "SELECT broken FROM;\nSELECT b FROM things WHERE b < 5;"

    instance = make_instance("fam_a", "OLAP", 6, seed=1)
    prompt = build_prompt(instance, rng_for("llm", 0))
    gen = LlmQueryGenerator(client, prompt)
    workloads = generate_olap_workloads(instance, gen, count=1, workload_size=2,
                                        runtime_estimate=no_runtime_limit)
    queries = set(workloads[0].queries)
    assert "SELECT a FROM fixed_table WHERE a > 1" in queries
    assert "SELECT b FROM things WHERE b < 5" in queries


def test_parse_completion_strips_fences():
    text = "```sql\nSELECT a FROM t;\nSELECT b FROM u;\n```"
    assert parse_completion_queries(text) == ["SELECT a FROM t", "SELECT b FROM u"]


def test_default_templates_pass_syntax_check():
    instance = make_instance("fam_a", "OLAP", 8, seed=1)
    templates = default_query_templates(instance, seed=0)
    rng = rng_for("fill", 0)
    for template in templates:
        q = template.fill(rng)
        assert default_syntax_check(q) is None, q


def test_generate_oltp_weights_sum_to_one():
    instance = make_instance("fam_b", "OLTP", 6, seed=2)
    templates = transaction_templates(instance)
    assert len(templates) == 5
    assert set(templates) == {"delivery", "new_order", "order_status", "payment", "stock_level"}
    workloads = generate_oltp_workloads(templates, count=40, seed=1, benchmark="fam_b")
    for w in workloads:
        assert abs(sum(weight for _, weight in w.transaction_mix) - 1.0) <= 1e-9


def test_generate_oltp_deterministic():
    instance = make_instance("fam_b", "OLTP", 6, seed=2)
    templates = transaction_templates(instance)
    a = generate_oltp_workloads(templates, 5, seed=3, benchmark="fam_b")
    b = generate_oltp_workloads(templates, 5, seed=3, benchmark="fam_b")
    assert a == b


def test_generate_oltp_needs_two_templates():
    with pytest.raises(DomainError):
        generate_oltp_workloads({"only": None}, 5, seed=0, benchmark="x")


# --- observations ---------------------------------------------------------------

def make_env_and_workloads(n_workloads=4):
    space = small_space()
    instance = make_instance("fam_a", "OLAP", 6, seed=1)
    env = SyntheticEnv(space, {"fam_a": instance}, seed=9, n_important=space.n)
    templates = default_query_templates(instance, seed=0)
    gen = TemplateQueryGenerator(templates, seed=0)
    workloads = generate_olap_workloads(instance, gen, count=n_workloads, workload_size=3,
                                        runtime_estimate=lambda q: 0.0)
    return env, space, workloads


def test_collect_observations_counts_and_roundtrip(tmp_path):
    env, space, workloads = make_env_and_workloads()
    observations = collect_observations(workloads, space, env, configs_per_workload=5, seed=0)
    assert len(observations) == 4 * 5
    path = tmp_path / "obs.jsonl"
    save_observations(path, observations)
    assert load_observations(path) == observations


# --- labels -----------------------------------------------------------------------

def constant_model(space):
    rng = np.random.default_rng(0)
    dim = space.n + len(METRIC_NAMES)
    X = rng.uniform(0, 1, size=(60, dim))
    y = 1.0 - np.abs(X[:, 0] - 0.5)
    samples = [CostSample(tuple(x), float(t), workload_id=f"w{i % 6}", orientation="higher_better")
               for i, (x, t) in enumerate(zip(X, y))]
    return train(samples, CostHyperparams(boosted_trees=30, bagged_trees=30, seed=0))


def test_tie_with_default_is_excluded():
    env, space, workloads = make_env_and_workloads(1)
    improved, tuned, default = verify_against_default(env, workloads[0],
                                                      space.default_configuration())
    assert tuned.value == pytest.approx(default.value)
    assert improved is False


def test_training_sample_requires_strict_improvement():
    with pytest.raises(DomainError):
        TrainingSample(workload_id="w", feature_text="t", feature_vector=(0.0,) * 14,
                       label=BucketedConfiguration((0,)),
                       perf_default=PerfMetric(10.0, "lower_better"),
                       perf_tuned=PerfMetric(10.0, "lower_better"),
                       label_source="cost_model", benchmark="b")


def test_collect_labels_filters_and_records_provenance():
    env, space, workloads = make_env_and_workloads(6)
    model = constant_model(space)
    samples, dropped = collect_labels(workloads, space, model, env, budget=10,
                                      metric_ranges=synthetic_metric_ranges(), seed=1)
    assert len(samples) + dropped == len(workloads)
    for s in samples:
        assert s.label_source == "cost_model"
        assert oriented_score(s.perf_tuned) > oriented_score(s.perf_default)
        assert len(s.label.buckets) == space.n


def test_sample_store_roundtrip_and_exclusion(tmp_path):
    env, space, workloads = make_env_and_workloads(6)
    model = constant_model(space)
    samples, _ = collect_labels(workloads, space, model, env, budget=10,
                                metric_ranges=synthetic_metric_ranges(), seed=1)
    if not samples:
        pytest.skip("no sample survived on this seed")
    path = tmp_path / "samples.jsonl"
    save_training_samples(path, samples)
    assert load_training_samples(path) == samples
    with pytest.raises(DomainError, match="excluded"):
        save_training_samples(path, samples, excluded_workload_ids={samples[0].workload_id})


def test_workload_store_roundtrip(tmp_path):
    env, space, workloads = make_env_and_workloads(3)
    instance = make_instance("fam_b", "OLTP", 6, seed=2)
    oltp = generate_oltp_workloads(transaction_templates(instance), 3, seed=0, benchmark="fam_b")
    path = tmp_path / "workloads.jsonl"
    save_workloads(path, workloads + oltp)
    assert load_workloads(path) == workloads + oltp
