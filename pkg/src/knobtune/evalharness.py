"""Experiment orchestration and improvement metrics.

Delta is relative improvement against the default configuration: latency
reduction for OLAP, throughput gain for OLTP; regressions come out negative
and are reported, never clamped. The runner measures each method's
environment-call count exactly (an instrumented wrapper per run) and its
tuning time either as wall clock or as simulated replay seconds, writing a
CSV of per-run rows plus a JSON summary of per-method means.

Per workload, feature extraction and the default-configuration reading are
shared across methods and excluded from per-method call accounting; a
method's count covers only the configurations it chose to measure (the
recommendation path performs exactly one verification run).
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import InstrumentedEnv, PerfMetric
from .errors import DomainError
from .knobspace import KnobSpace, normalize
from .recommender import greedy_recommend, recommend
from .seeding import derive_seed
from .tuner import EnvEvaluator, TuningTask, lhs_sample, random_search, tune

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "workload", "kind", "delta", "time_s", "env_calls")


@dataclass(frozen=True)
class EvalResult:
    method: str
    workload_id: str
    kind: str
    delta: float | None
    tuning_time_seconds: float
    env_calls: int
    failed: bool = False
    error: str = ""


def delta_olap(default_latency: float, optimized_latency: float) -> float:
    """(default - optimized) / default; positive when latency dropped."""
    if default_latency <= 0 or optimized_latency <= 0:
        raise DomainError("latencies must be positive")
    return (default_latency - optimized_latency) / default_latency


def delta_oltp(default_tps: float, optimized_tps: float) -> float:
    """(optimized - default) / default; positive when throughput rose."""
    if default_tps <= 0 or optimized_tps <= 0:
        raise DomainError("throughputs must be positive")
    return (optimized_tps - default_tps) / default_tps


def delta_for(default: PerfMetric, optimized: PerfMetric) -> float:
    if default.orientation != optimized.orientation:
        raise DomainError("cannot compare metrics with different orientations")
    if default.orientation == "lower_better":
        return delta_olap(default.value, optimized.value)
    return delta_oltp(default.value, optimized.value)


# --- evaluation splits -------------------------------------------------------

@dataclass
class CrossSchemaSplit:
    train: list
    holdout: list
    held_out_benchmarks: list[str]


def split_cross_schema(samples, fold_index: int, n_folds: int, seed: int = 0) -> CrossSchemaSplit:
    """Hold out whole benchmarks: one OLAP and one OLTP group per fold.

    Benchmarks are shuffled deterministically and assigned to folds
    round-robin within each kind; across all folds every benchmark is held
    out at most once and identifier overlap between train and holdout is
    structurally impossible.
    """
    if not 0 <= fold_index < n_folds:
        raise DomainError(f"fold index {fold_index} outside 0..{n_folds - 1}")
    by_kind: dict[str, list[str]] = {}
    for s in samples:
        kind = "OLAP" if s.perf_default.orientation == "lower_better" else "OLTP"
        group = by_kind.setdefault(kind, [])
        if s.benchmark not in group:
            group.append(s.benchmark)
    if not by_kind:
        raise DomainError("no samples to split")
    for kind, benchmarks in by_kind.items():
        if len(benchmarks) < n_folds:
            raise DomainError(
                f"{kind} has {len(benchmarks)} benchmark groups, fewer than {n_folds} folds")
    rng = np.random.default_rng(derive_seed("cross-schema", seed) % 2**32)
    held = set()
    for kind in sorted(by_kind):
        order = list(rng.permutation(sorted(by_kind[kind])))
        held.add(order[fold_index])
    train = [s for s in samples if s.benchmark not in held]
    holdout = [s for s in samples if s.benchmark in held]
    return CrossSchemaSplit(train=train, holdout=holdout,
                            held_out_benchmarks=sorted(held))


# --- method adapters -----------------------------------------------------------

def method_recommend(predictor, cost_model, space: KnobSpace, k: int,
                     temperature: float, seed: int):
    """Sampling-then-ranking plus its single verification run."""

    def run(workload, env, features):
        rng = np.random.default_rng(derive_seed("eval-recommend", seed, workload.id) % 2**32)
        result = recommend(features, predictor, cost_model, space,
                           k=k, temperature=temperature, rng=rng)
        env.evaluate(workload, result.configuration)  # verification run
        return result.configuration

    return run


def method_greedy(predictor, space: KnobSpace):
    """Greedy decode ablation; also verified with one run."""

    def run(workload, env, features):
        cfg = greedy_recommend(features, predictor, space)
        env.evaluate(workload, cfg)
        return cfg

    return run


def method_tune(space: KnobSpace, budget: int, seed: int):
    """Iterative BO against the live environment (budget replays)."""

    def run(workload, env, features):
        evaluator = EnvEvaluator(env, workload)
        best, _ = tune(TuningTask(space, workload.id, evaluator, budget=budget),
                       derive_seed("eval-tune", seed, workload.id))
        return best

    return run


def method_random(space: KnobSpace, budget: int, seed: int):
    def run(workload, env, features):
        evaluator = EnvEvaluator(env, workload)
        best, _ = random_search(TuningTask(space, workload.id, evaluator, budget=budget),
                                derive_seed("eval-random", seed, workload.id))
        return best

    return run


def method_lhs_costmodel(cost_model, space: KnobSpace, n_samples: int, seed: int):
    """Bulk space sampling ranked by the cost model, one verification run."""

    def run(workload, env, features):
        cfgs = lhs_sample(space, n_samples, derive_seed("eval-lhs", seed, workload.id))
        inputs = np.array([tuple(normalize(space, c).values) + tuple(features.vector)
                           for c in cfgs])
        scores = cost_model.predict_batch(inputs)
        best = cfgs[int(np.argmax(scores))]
        env.evaluate(workload, best)
        return best

    return run


# --- experiment runner -----------------------------------------------------------

def run_experiment(methods: dict, workloads, env, metric_ranges: dict,
                   use_virtual_time: bool = False,
                   out_csv=None, out_summary=None) -> list[EvalResult]:
    """Run every method on every workload; one row each, failures recorded.

    With ``use_virtual_time`` the reported time is the simulated replay cost
    of the method's environment calls (deterministic); otherwise wall clock
    from feature extraction to final configuration.
    """
    results: list[EvalResult] = []
    for workload in workloads:
        wall_start = time.perf_counter()
        features = env.workload_features(workload, metric_ranges)
        feature_wall = time.perf_counter() - wall_start
        default_perf = env.baseline(workload)
        for name in methods:
            instrumented = InstrumentedEnv(env)
            t0 = time.perf_counter()
            try:
                cfg = methods[name](workload, instrumented, features)
            except Exception as exc:
                logger.warning("method %s failed on %s: %s", name, workload.id, exc)
                elapsed = (instrumented.simulated_seconds if use_virtual_time
                           else feature_wall + time.perf_counter() - t0)
                results.append(EvalResult(name, workload.id, workload.kind, None,
                                          elapsed, instrumented.calls,
                                          failed=True, error=str(exc)))
                continue
            optimized_perf, _ = env.evaluate(workload, cfg)  # measurement, not tuning cost
            elapsed = (instrumented.simulated_seconds if use_virtual_time
                       else feature_wall + time.perf_counter() - t0)
            results.append(EvalResult(name, workload.id, workload.kind,
                                      delta_for(default_perf, optimized_perf),
                                      elapsed, instrumented.calls))
    if out_csv is not None:
        write_results_csv(out_csv, results)
    if out_summary is not None:
        write_summary(out_summary, results)
    return results


def write_results_csv(path, results: list[EvalResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in results:
            writer.writerow([r.method, r.workload_id, r.kind,
                             "" if r.delta is None else repr(r.delta),
                             repr(r.tuning_time_seconds), r.env_calls])


def write_summary(path, results: list[EvalResult]) -> None:
    summary = {}
    for r in results:
        summary.setdefault(r.method, []).append(r)
    payload = {}
    for method in sorted(summary):
        rows = summary[method]
        ok = [r for r in rows if not r.failed]
        payload[method] = {
            "runs": len(rows),
            "failures": len(rows) - len(ok),
            "mean_delta": float(np.mean([r.delta for r in ok])) if ok else None,
            "mean_time_s": float(np.mean([r.tuning_time_seconds for r in ok])) if ok else None,
            "mean_env_calls": float(np.mean([r.env_calls for r in ok])) if ok else None,
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
