"""Training data construction.

Synthesizes OLAP and OLTP workloads against schema instances, collects
promising-configuration labels by running the tuner with the cost-model
evaluator, verifies each label against the default configuration with a
single environment run, and persists only the survivors. OLAP queries come
either from a text-completion client (a port; tests stub it) or from slot
templates perturbed with sampled column values. OLTP workloads are weight
vectors over transaction templates drawn uniformly on the simplex.

Quality control for generated queries: a syntax-check hook (EXPLAIN-style
validation port) with one repair round, then an estimated-runtime threshold;
rejected queries are logged with reasons.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .env import PerfMetric, Observation, oriented_score
from .errors import DomainError, GenerationError
from .features import Workload, _statement_profile
from .instances import SchemaInstance
from .knobspace import (
    BucketedConfiguration,
    Configuration,
    KnobSpace,
    bucket_to_value,
    bucketize,
    normalize,
)
from .seeding import derive_seed, rng_for
from .stores import read_store, write_store
from .tuner import CostModelEvaluator, TuningTask, lhs_sample, tune, verify_against_default

logger = logging.getLogger(__name__)

WORKLOAD_FORMAT = "knobtune/workloads"
SAMPLE_FORMAT = "knobtune/training-samples"
OBSERVATION_FORMAT = "knobtune/observations"

DEFAULT_WORKLOAD_SIZE = 10  # queries per OLAP workload
DEFAULT_MAX_QUERY_SECONDS = 60.0


# --- prompt -----------------------------------------------------------------

@dataclass(frozen=True)
class PromptSpec:
    """Six ordered sections guiding a text-completion query generator."""

    task_overview: str
    database_schema: str
    generation_guidance: str
    predicate_aid: str
    sample_queries: str
    output_format: str

    def __post_init__(self):
        for name in ("task_overview", "database_schema", "generation_guidance",
                     "predicate_aid", "sample_queries", "output_format"):
            if not getattr(self, name).strip():
                raise DomainError(f"prompt section {name} is empty")

    def render(self) -> str:
        return "\n".join([
            "## Task Overview", self.task_overview,
            "## Database Schema", self.database_schema,
            "## Guidance for Query Generation", self.generation_guidance,
            "## Predicate Generation Aid", self.predicate_aid,
            "## Sample Queries", self.sample_queries,
            "## Output Format", self.output_format,
        ])


def build_prompt(instance: SchemaInstance, rng: np.random.Generator,
                 exemplar_queries: list[str] | None = None,
                 max_tables: int = 6, values_per_column: int = 3) -> PromptSpec:
    """Assemble the generation prompt from a random slice of the instance."""
    if not instance.tables:
        raise DomainError("instance has no tables")
    k = min(max_tables, len(instance.tables))
    n_pick = int(rng.integers(1, k + 1))
    picks = sorted(rng.choice(len(instance.tables), size=n_pick, replace=False))
    subset = [instance.tables[int(i)] for i in picks]

    aid_lines = []
    for table in subset:
        for column in table.columns:
            if not column.sample_values:
                continue
            chosen = rng.choice(len(column.sample_values),
                                size=min(values_per_column, len(column.sample_values)),
                                replace=False)
            values = ", ".join(repr(column.sample_values[int(c)]) for c in sorted(chosen))
            aid_lines.append(f"{table.name}.{column.name}: {values}")

    exemplars = list(exemplar_queries or [])
    if exemplars:
        n_ex = min(3, len(exemplars))
        idx = sorted(rng.choice(len(exemplars), size=n_ex, replace=False))
        sample_text = "\n".join(exemplars[int(i)] for i in idx)
    else:
        sample_text = "(none provided)"

    return PromptSpec(
        task_overview=("Write realistic, complex analytical SQL queries against the "
                       "database described below. Aim for multi-table joins, selective "
                       "filters, grouping and aggregation."),
        database_schema="\n".join(t.ddl() for t in subset),
        generation_guidance=("Use standard PostgreSQL syntax. Only reference tables and "
                             "columns from the schema above. Prefer joins over subqueries "
                             "and include WHERE predicates on the listed columns."),
        predicate_aid="\n".join(aid_lines),
        sample_queries=sample_text + "\n-- The samples above are illustrative only; do not copy them.",
        output_format="Return each query on its own line, terminated by a semicolon.",
    )


# --- query generators -------------------------------------------------------

@dataclass(frozen=True)
class QueryTemplate:
    """SQL text with {slot} placeholders and candidate values per slot."""

    text: str
    slots: dict

    def fill(self, rng: np.random.Generator) -> str:
        chosen = {}
        for slot, values in sorted(self.slots.items()):
            chosen[slot] = values[int(rng.integers(0, len(values)))]
        return self.text.format(**chosen)


class TemplateQueryGenerator:
    """Perturbs slot templates with sampled values (the non-LLM route)."""

    def __init__(self, templates: list[QueryTemplate], seed: int = 0):
        if not templates:
            raise DomainError("no query templates")
        self.templates = list(templates)
        self.rng = rng_for("template-gen", seed)

    def propose(self, n: int) -> list[str]:
        out = []
        for _ in range(n):
            template = self.templates[int(self.rng.integers(0, len(self.templates)))]
            out.append(template.fill(self.rng))
        return out

    def repair(self, query: str, error: str) -> str | None:
        # templates carry no model to consult; offer a fresh draw instead
        return self.propose(1)[0]


class LlmQueryGenerator:
    """Drives a text-completion client (callable prompt -> completion text)."""

    def __init__(self, client: Callable[[str], str], prompt: PromptSpec,
                 queries_per_request: int = 10):
        self.client = client
        self.prompt = prompt
        self.queries_per_request = queries_per_request

    def propose(self, n: int) -> list[str]:
        out: list[str] = []
        requests = -(-n // self.queries_per_request)
        for _ in range(requests):
            text = self.client(self.prompt.render())
            out.extend(parse_completion_queries(text))
            if len(out) >= n:
                break
        return out[:n] if len(out) > n else out

    def repair(self, query: str, error: str) -> str | None:
        feedback = (f"{self.prompt.render()}\n\nThe following query failed validation "
                    f"with error: {error}\n{query}\nReturn a corrected query.")
        fixed = parse_completion_queries(self.client(feedback))
        return fixed[0] if fixed else None


def parse_completion_queries(text: str) -> list[str]:
    """Split a completion into SQL statements; tolerates code fences."""
    cleaned = "\n".join(line for line in text.splitlines()
                        if not line.strip().startswith("```"))
    parts = [p.strip() for p in cleaned.split(";")]
    return [p for p in parts if p]


def default_syntax_check(sql: str) -> str | None:
    """EXPLAIN-style validation stand-in: lightweight structural checks."""
    if sql.count("(") != sql.count(")"):
        return "unbalanced parentheses"
    profile = _statement_profile(sql)
    if profile is None:
        return "statement is not recognizable SQL"
    if profile["is_read"] and not profile["tables"]:
        return "query references no tables"
    return None


def quality_filter(candidates: list[str], syntax_check, repair,
                   runtime_estimate, max_seconds: float) -> tuple[list[str], list[tuple[str, str]]]:
    """Apply syntax validation (one repair round) then the runtime threshold."""
    accepted: list[str] = []
    rejections: list[tuple[str, str]] = []
    for query in candidates:
        error = syntax_check(query)
        if error is not None:
            fixed = repair(query, error) if repair is not None else None
            if fixed is None or syntax_check(fixed) is not None:
                rejections.append((query, f"syntax: {error}"))
                logger.info("rejected query (%s): %.80r", error, query)
                continue
            query = fixed
        seconds = runtime_estimate(query)
        if seconds > max_seconds:
            rejections.append((query, f"estimated runtime {seconds:.1f}s exceeds {max_seconds:.0f}s"))
            logger.info("rejected query (slow, %.1fs): %.80r", seconds, query)
            continue
        accepted.append(query)
    return accepted, rejections


def default_query_templates(instance: SchemaInstance, seed: int = 0,
                            n_templates: int = 8) -> list[QueryTemplate]:
    """Parameterized analytical SELECT templates derived from the schema."""
    rng = rng_for("default-templates", instance.name, seed)
    templates = []
    for _ in range(n_templates):
        n_tables = int(rng.integers(1, min(3, len(instance.tables)) + 1))
        picks = rng.choice(len(instance.tables), size=n_tables, replace=False)
        tables = [instance.tables[int(i)] for i in picks]
        base = tables[0]
        filter_col = None
        for c in base.columns:
            if c.sql_type in ("integer", "numeric") and c.name != "id" and c.sample_values:
                filter_col = c
                break
        if filter_col is None:
            filter_col = base.columns[0]
        select_col = tables[-1].columns[min(1, len(tables[-1].columns) - 1)]

        from_clause = base.name
        for t in tables[1:]:
            from_clause += f" JOIN {t.name} ON {base.name}.id = {t.name}.id"
        agg = ["COUNT(*)", f"SUM({base.name}.{filter_col.name})",
               f"AVG({base.name}.{filter_col.name})"][int(rng.integers(0, 3))]
        text = (f"SELECT {tables[-1].name}.{select_col.name}, {agg} "
                f"FROM {from_clause} "
                f"WHERE {base.name}.{filter_col.name} > {{threshold}} "
                f"GROUP BY {tables[-1].name}.{select_col.name} "
                f"ORDER BY {agg} DESC LIMIT {{limit}}")
        templates.append(QueryTemplate(
            text=text,
            slots={"threshold": tuple(filter_col.sample_values),
                   "limit": (5, 10, 20, 50, 100)},
        ))
    return templates


# --- workload generation ----------------------------------------------------

def generate_olap_workloads(instance: SchemaInstance, generator, count: int,
                            runtime_estimate, *,
                            workload_size: int = DEFAULT_WORKLOAD_SIZE,
                            syntax_check=default_syntax_check,
                            max_query_seconds: float = DEFAULT_MAX_QUERY_SECONDS,
                            max_rounds: int = 12) -> list[Workload]:
    """Generate OLAP workloads of ``workload_size`` quality-controlled queries."""
    needed = count * workload_size
    accepted: list[str] = []
    seen: set[str] = set()
    all_rejections: list[tuple[str, str]] = []
    for _ in range(max_rounds):
        missing = needed - len(accepted)
        if missing <= 0:
            break
        batch = generator.propose(missing)
        if not batch:
            break
        ok, rejections = quality_filter(batch, syntax_check, getattr(generator, "repair", None),
                                        runtime_estimate, max_query_seconds)
        all_rejections.extend(rejections)
        for q in ok:
            if q not in seen:
                seen.add(q)
                accepted.append(q)
    if len(accepted) < needed:
        reasons = "; ".join(sorted({r for _, r in all_rejections})) or "generator exhausted"
        raise GenerationError(
            f"only {len(accepted)}/{needed} queries survived quality control ({reasons})")
    workloads = []
    for i in range(count):
        chunk = tuple(accepted[i * workload_size:(i + 1) * workload_size])
        workloads.append(Workload(id=f"{instance.name}-olap-{i:04d}", kind="OLAP",
                                  benchmark=instance.name, queries=chunk))
    return workloads


def generate_oltp_workloads(templates: dict, count: int, seed: int,
                            benchmark: str, id_prefix: str | None = None) -> list[Workload]:
    """OLTP workloads: transaction weights drawn uniformly on the simplex."""
    if len(templates) < 2:
        raise DomainError("need at least 2 transaction templates")
    ids = sorted(templates)
    rng = rng_for("oltp-gen", benchmark, seed)
    prefix = id_prefix or f"{benchmark}-oltp"
    workloads = []
    for i in range(count):
        weights = rng.dirichlet(np.ones(len(ids)))
        mix = tuple((tid, float(w)) for tid, w in zip(ids, weights))
        workloads.append(Workload(id=f"{prefix}-{i:04d}", kind="OLTP",
                                  benchmark=benchmark, transaction_mix=mix))
    return workloads


# --- observations (cost-model training data) --------------------------------

def collect_observations(workloads: list[Workload], space: KnobSpace, env,
                         configs_per_workload: int, seed: int,
                         source: str = "synthetic") -> list[Observation]:
    """Evaluate a space-filling design per workload to seed the cost model."""
    if configs_per_workload < 2:
        raise DomainError("need at least 2 configurations per workload")
    observations = []
    for w in workloads:
        cfgs = lhs_sample(space, configs_per_workload - 1,
                          derive_seed("observe", seed, w.id))
        for cfg in [space.default_configuration()] + cfgs:
            perf, metrics = env.evaluate(w, cfg)
            observations.append(Observation(w.id, cfg, perf, metrics, source=source))
    return observations


# --- label collection ---------------------------------------------------------

@dataclass(frozen=True)
class TrainingSample:
    """One predictor training record; only verified improvements qualify."""

    workload_id: str
    feature_text: str
    feature_vector: tuple[float, ...]
    label: BucketedConfiguration
    perf_default: PerfMetric
    perf_tuned: PerfMetric
    label_source: str
    benchmark: str

    def __post_init__(self):
        if oriented_score(self.perf_tuned) <= oriented_score(self.perf_default):
            raise DomainError(
                f"sample {self.workload_id!r}: tuned perf does not beat default")


def collect_labels(workloads: list[Workload], space: KnobSpace, cost_model, env,
                   budget: int, metric_ranges: dict, seed: int,
                   label_source: str = "cost_model") -> tuple[list[TrainingSample], int]:
    """Tune each workload against the cost model, verify, keep improvements.

    The verification run evaluates the bucket-decoded label (what a predictor
    trained on this sample would actually recommend), so every persisted
    sample re-verifies. Returns (samples, dropped_count).
    """
    samples: list[TrainingSample] = []
    dropped = 0
    for w in workloads:
        features = env.workload_features(w, metric_ranges)
        evaluator = CostModelEvaluator(cost_model, space, features.vector)
        task = TuningTask(space, w.id, evaluator, budget=budget)
        best_cfg, _ = tune(task, derive_seed("label", seed, w.id))
        label = bucketize(normalize(space, best_cfg))
        decoded = bucket_to_value(space, label)
        improved, tuned_perf, default_perf = verify_against_default(env, w, decoded)
        if not improved:
            dropped += 1
            logger.info("workload %s: tuned config failed verification, dropped", w.id)
            continue
        samples.append(TrainingSample(
            workload_id=w.id,
            feature_text=features.text,
            feature_vector=features.vector,
            label=label,
            perf_default=default_perf,
            perf_tuned=tuned_perf,
            label_source=label_source,
            benchmark=w.benchmark,
        ))
    return samples, dropped


# --- persistence --------------------------------------------------------------

def save_workloads(path, workloads: list[Workload]) -> None:
    write_store(path, WORKLOAD_FORMAT, ({
        "id": w.id, "kind": w.kind, "benchmark": w.benchmark,
        "queries": list(w.queries),
        "transaction_mix": [[tid, weight] for tid, weight in w.transaction_mix],
    } for w in workloads))


def load_workloads(path, produced_by: str | None = "gen-workloads") -> list[Workload]:
    return [Workload(id=r["id"], kind=r["kind"], benchmark=r["benchmark"],
                     queries=tuple(r["queries"]),
                     transaction_mix=tuple((t, w) for t, w in r["transaction_mix"]))
            for r in read_store(path, WORKLOAD_FORMAT, produced_by=produced_by)]


def save_observations(path, observations: list[Observation]) -> None:
    write_store(path, OBSERVATION_FORMAT, ({
        "workload_id": o.workload_id,
        "config": list(o.configuration.values),
        "perf": {"value": o.perf.value, "orientation": o.perf.orientation},
        "metrics": o.metrics.as_dict(),
        "source": o.source,
    } for o in observations))


def load_observations(path, produced_by: str | None = "collect-observations") -> list[Observation]:
    from .features import InternalMetrics

    out = []
    for r in read_store(path, OBSERVATION_FORMAT, produced_by=produced_by):
        out.append(Observation(
            workload_id=r["workload_id"],
            configuration=Configuration(tuple(r["config"])),
            perf=PerfMetric(r["perf"]["value"], r["perf"]["orientation"]),
            metrics=InternalMetrics(**r["metrics"]),
            source=r["source"],
        ))
    return out


def save_training_samples(path, samples: list[TrainingSample],
                          excluded_workload_ids=()) -> None:
    """Persist samples; refuses any sample whose workload is on the exclusion
    list (held-out identifiers must never reach the training store)."""
    excluded = set(excluded_workload_ids)
    clash = sorted(s.workload_id for s in samples if s.workload_id in excluded)
    if clash:
        raise DomainError(f"training samples include excluded workloads: {clash[:5]}")
    write_store(path, SAMPLE_FORMAT, ({
        "workload_id": s.workload_id,
        "feature_text": s.feature_text,
        "feature_vector": list(s.feature_vector),
        "label": list(s.label.buckets),
        "perf_default": {"value": s.perf_default.value, "orientation": s.perf_default.orientation},
        "perf_tuned": {"value": s.perf_tuned.value, "orientation": s.perf_tuned.orientation},
        "label_source": s.label_source,
        "benchmark": s.benchmark,
    } for s in samples))


def load_training_samples(path, produced_by: str | None = "collect-labels") -> list[TrainingSample]:
    out = []
    for r in read_store(path, SAMPLE_FORMAT, produced_by=produced_by):
        out.append(TrainingSample(
            workload_id=r["workload_id"],
            feature_text=r["feature_text"],
            feature_vector=tuple(r["feature_vector"]),
            label=BucketedConfiguration(tuple(int(b) for b in r["label"])),
            perf_default=PerfMetric(r["perf_default"]["value"], r["perf_default"]["orientation"]),
            perf_tuned=PerfMetric(r["perf_tuned"]["value"], r["perf_tuned"]["orientation"]),
            label_source=r["label_source"],
            benchmark=r["benchmark"],
        ))
    return out
