"""Evaluation environments.

``SyntheticEnv`` is a deterministic stand-in for a real database under
benchmark load: per workload it exposes a response surface over the knob
space (product of per-knob unimodal factors times a pairwise-interaction
term), a published default-configuration baseline, synthesized EXPLAIN-style
plans, and 14 internal counters that shift with workload character and
configuration quality. Same (seed, workload, configuration) always produces
bit-identical output; optional noise is itself a deterministic function of
those inputs. Performance is bounded within [baseline/10, baseline*10] by
construction, and ``grid_optimum`` brute-forces small spaces as a test
oracle.

Real-DBMS integration is a port only (``DbmsAdapter``): implementations run
the workload, read engine counters, and measure latency (OLAP, full replay)
or throughput (OLTP, 1-minute stress test). Connection parameters come from
environment variables; the engine must be restarted whenever an applied knob
has restart_required, and the adapter holds exclusive access with one
evaluation in flight at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import BudgetExceededError, DomainError
from .features import (
    InternalMetrics,
    METRIC_NAMES,
    PlanTree,
    Workload,
    WorkloadFeatures,
    assemble_features,
    extract_statistics,
    _statement_profile,
)
from .instances import SchemaInstance, transaction_templates
from .knobspace import Configuration, KnobSpace, normalize
from .seeding import derive_seed, rng_for

ORIENTATIONS = ("lower_better", "higher_better")

# Duration charged per evaluation when tracking simulated tuning time.
OLTP_STRESS_SECONDS = 60.0

OBSERVATION_SOURCES = ("real_exec", "synthetic", "cost_model")


@dataclass(frozen=True)
class PerfMetric:
    """A positive performance reading plus which direction is better."""

    value: float
    orientation: str

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise DomainError(f"unknown orientation {self.orientation!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise DomainError(f"perf value {self.value} must be finite and positive")


def oriented_score(perf: PerfMetric) -> float:
    """Map a PerfMetric onto a maximize-me axis (latency is negated)."""
    return perf.value if perf.orientation == "higher_better" else -perf.value


def relative_quality(perf: PerfMetric, reference: PerfMetric) -> float:
    """How close perf is to a better-or-equal reference, as a ratio in (0, inf)."""
    if perf.orientation == "higher_better":
        return perf.value / reference.value
    return reference.value / perf.value


@dataclass(frozen=True)
class Observation:
    workload_id: str
    configuration: Configuration
    perf: PerfMetric
    metrics: InternalMetrics
    source: str

    def __post_init__(self):
        if self.source not in OBSERVATION_SOURCES:
            raise DomainError(f"unknown observation source {self.source!r}")


class DbmsAdapter(Protocol):
    """Port for a real database engine.

    Contract: ``evaluate`` applies the configuration (restarting the engine
    if any changed knob requires it), replays the workload (OLAP) or runs a
    1-minute stress test (OLTP), and returns the measured PerfMetric plus the
    14 counters read from the engine's statistics views. ``explain`` returns
    one plan per statement under the default configuration. Credentials and
    connection parameters are read from environment variables; callers must
    serialize access (one evaluation in flight). Hooks for warm-up runs or
    cache flushes between iterations are implementation-defined.
    """

    def evaluate(self, workload: Workload, cfg: Configuration) -> tuple[PerfMetric, InternalMetrics]: ...

    def explain(self, workload: Workload) -> tuple[PlanTree, ...]: ...


def _snap_columns(space: KnobSpace, X: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Concretize normalized rows: per-knob raw columns plus the normalized
    matrix those concrete values map back to.

    The normalized matrix is computed with the same float ops ``normalize``
    applies to the assembled Configuration, so batch scores match scalar
    evaluation exactly.
    """
    X = np.asarray(X, dtype=float)
    raw_cols: list[np.ndarray] = []
    Xn = np.empty_like(X)
    for j, knob in enumerate(space.knobs):
        col = X[:, j]
        if knob.kind == "integer":
            raw = np.clip(np.floor(knob.min + col * knob.span + 0.5), knob.min, knob.max)
            Xn[:, j] = (raw - knob.min) / knob.span
        elif knob.kind == "categorical":
            m = len(knob.categories)
            raw = np.zeros(len(col)) if m == 1 else np.clip(np.floor(col * (m - 1) + 0.5), 0, m - 1)
            Xn[:, j] = raw if m == 1 else raw / (m - 1)
        else:
            raw = knob.min + col * knob.span
            Xn[:, j] = (raw - knob.min) / knob.span
        raw_cols.append(raw)
    return raw_cols, Xn


def _assemble_config(space: KnobSpace, raw_cols: list[np.ndarray], row: int) -> Configuration:
    values = []
    for j, knob in enumerate(space.knobs):
        raw = raw_cols[j][row]
        if knob.kind == "integer":
            values.append(int(raw))
        elif knob.kind == "categorical":
            values.append(knob.categories[int(raw)])
        else:
            values.append(float(raw))
    return Configuration(tuple(values))


class SyntheticEnv:
    """Deterministic synthetic database environment.

    ``n_important`` knobs get strong curvature (the rest are nearly flat),
    matching the observation that a handful of knobs dominate real engines.
    Peak locations vary smoothly with a workload signature derived from its
    statement statistics, so workload features carry signal about where the
    optimum sits.
    """

    def __init__(self, space: KnobSpace, instances: dict[str, SchemaInstance],
                 seed: int = 0, noise: float = 0.0, n_important: int = 16,
                 interaction_pairs: int = 6, interaction_strength: float = 0.2,
                 response_exponent: float = 1.5, peak_overrides: dict | None = None):
        if noise < 0:
            raise DomainError("noise amplitude must be non-negative")
        self.space = space
        self.instances = dict(instances)
        self.seed = seed
        self.noise = noise
        self.response_exponent = response_exponent
        self.interaction_strength = interaction_strength
        self.peak_overrides = dict(peak_overrides or {})

        n = space.n
        rng = rng_for("env", seed)
        n_important = min(n_important, n)
        self._important = np.sort(rng.choice(n, size=n_important, replace=False))
        self._curvature = rng.uniform(0.0, 0.03, size=n)
        self._curvature[self._important] = rng.uniform(0.45, 0.9, size=n_important)
        # smooth signature -> peak projection, shared across workloads
        self._projection = rng.normal(0.0, 0.9, size=(n, 6))
        self._pairs = []
        if interaction_pairs > 0 and n_important >= 2 and interaction_strength > 0:
            coeffs = rng.uniform(-1.0, 1.0, size=interaction_pairs)
            coeffs *= interaction_strength / max(np.sum(np.abs(coeffs)), 1e-12)
            for k in range(interaction_pairs):
                i, j = rng.choice(self._important, size=2, replace=False)
                self._pairs.append((int(i), int(j), float(coeffs[k])))
        buffer_like = "shared_buffers"
        names = space.names()
        self._buffer_idx = names.index(buffer_like) if buffer_like in names else int(self._important[0])
        self._signature_cache: dict[str, np.ndarray] = {}

    # --- workload-derived quantities -----------------------------------

    def templates_for(self, workload: Workload) -> dict | None:
        if workload.kind != "OLTP":
            return None
        instance = self.instances.get(workload.benchmark)
        if instance is None:
            raise DomainError(f"workload {workload.id!r}: unknown benchmark {workload.benchmark!r}")
        return transaction_templates(instance)

    def statistics(self, workload: Workload):
        return extract_statistics(workload, self.templates_for(workload))

    def signature(self, workload: Workload) -> np.ndarray:
        cached = self._signature_cache.get(workload.id)
        if cached is not None:
            return cached
        stats = self.statistics(workload)
        total = max(stats.total_statements, 1)
        ops = stats.operator_proportions
        family = (derive_seed("family", workload.benchmark) % 10**6) / 10**6
        sig = np.array([
            stats.read_statements / total,
            min(1.0, stats.avg_predicates_per_query / 8.0),
            ops.get("ORDER BY", 0.0),
            (ops.get("GROUP BY", 0.0) + ops.get("aggregation", 0.0)) / 2.0,
            min(1.0, len(stats.table_access_freq) / 12.0),
            family,
        ])
        self._signature_cache[workload.id] = sig
        return sig

    def peaks(self, workload: Workload) -> np.ndarray:
        """Per-knob optimum location in normalized space for this workload."""
        sig = self.signature(workload)
        mu = 0.5 + 0.45 * np.tanh(self._projection @ (sig - 0.5))
        for name, frac in self.peak_overrides.items():
            mu[self.space.index_of(name)] = frac
        return mu

    def orientation_for(self, workload: Workload) -> str:
        return "lower_better" if workload.kind == "OLAP" else "higher_better"

    def baseline_value(self, workload: Workload) -> float:
        rng = rng_for("env-baseline", self.seed, workload.id)
        if workload.kind == "OLAP":
            return float(rng.uniform(20.0, 120.0))
        return float(rng.uniform(80.0, 400.0))

    def baseline(self, workload: Workload) -> PerfMetric:
        """Published default-configuration performance for this workload."""
        return PerfMetric(self.baseline_value(workload), self.orientation_for(workload))

    # --- response surface ------------------------------------------------

    def _quality(self, workload: Workload, X: np.ndarray) -> np.ndarray:
        mu = self.peaks(workload)
        d2 = (X - mu) ** 2
        factors = 1.0 - self._curvature * d2
        q = np.prod(factors, axis=1)
        if self._pairs:
            inter = np.zeros(X.shape[0])
            for i, j, e in self._pairs:
                inter += e * (X[:, i] - mu[i]) * (X[:, j] - mu[j])
            q = q * (1.0 + inter)
        return q

    def _perf_values(self, workload: Workload, X: np.ndarray) -> np.ndarray:
        x_default = np.asarray(normalize(self.space, self.space.default_configuration()).values)
        q_default = self._quality(workload, x_default[None, :])[0]
        ratio = np.clip((self._quality(workload, X) / q_default) ** self.response_exponent, 0.1, 10.0)
        base = self.baseline_value(workload)
        if self.orientation_for(workload) == "lower_better":
            values = base / ratio
        else:
            values = base * ratio
        return np.clip(values, base / 10.0, base * 10.0)

    def _noise_factor(self, workload: Workload, cfg: Configuration) -> float:
        if self.noise == 0.0:
            return 1.0
        rng = rng_for("env-noise", self.seed, workload.id, repr(cfg.values))
        return 1.0 + self.noise * float(rng.uniform(-1.0, 1.0))

    # --- public evaluation -------------------------------------------------

    def evaluate(self, workload: Workload, cfg: Configuration) -> tuple[PerfMetric, InternalMetrics]:
        """Replay the workload under cfg: deterministic perf plus counters."""
        self.space.validate(cfg)
        x = np.asarray(normalize(self.space, cfg).values)
        value = float(self._perf_values(workload, x[None, :])[0])
        base = self.baseline_value(workload)
        value = float(np.clip(value * self._noise_factor(workload, cfg), base / 10.0, base * 10.0))
        perf = PerfMetric(value, self.orientation_for(workload))
        return perf, self._metrics(workload, x, cfg)

    def _metrics(self, workload: Workload, x: np.ndarray, cfg: Configuration) -> InternalMetrics:
        stats = self.statistics(workload)
        sig = self.signature(workload)
        T = max(stats.total_statements, 1)
        read_frac = sig[0]
        write_frac = 1.0 - read_frac
        beta = float(x[self._buffer_idx])  # buffer-like knob quality
        jitter_rng = rng_for("env-metrics", self.seed, workload.id, repr(cfg.values))
        jitter = jitter_rng.uniform(0.95, 1.05, size=len(METRIC_NAMES))

        tup_returned = T * (200.0 + 1800.0 * sig[1])
        tup_fetched = 0.7 * tup_returned * (0.4 + 0.6 * sig[4])
        tup_inserted = T * write_frac * 120.0
        tup_updated = T * write_frac * 160.0
        tup_deleted = T * write_frac * 40.0
        blks_read = T * (50.0 + 450.0 * (1.0 - beta)) * (0.5 + sig[4])
        blks_hit = T * (200.0 + 800.0 * beta)
        disk_read_count = 0.8 * blks_read
        disk_write_count = 0.5 * (tup_inserted + tup_updated + tup_deleted) + T * write_frac * 20.0
        raw = {
            "xact_commit": T * (0.9 + 0.1 * read_frac),
            "xact_rollback": T * 0.02 * write_frac,
            "blks_read": blks_read,
            "blks_hit": blks_hit,
            "tup_returned": tup_returned,
            "tup_fetched": tup_fetched,
            "tup_inserted": tup_inserted,
            "conflicts": T * 0.01 * write_frac,
            "tup_updated": tup_updated,
            "tup_deleted": tup_deleted,
            "disk_read_count": disk_read_count,
            "disk_write_count": disk_write_count,
            "disk_read_bytes": disk_read_count * 8192.0,
            "disk_write_bytes": disk_write_count * 8192.0,
        }
        values = {name: float(int(raw[name] * jitter[k])) for k, name in enumerate(METRIC_NAMES)}
        return InternalMetrics(**values)

    # --- plans and features --------------------------------------------

    def _table_rows(self, workload: Workload, table: str) -> int:
        instance = self.instances.get(workload.benchmark)
        if instance is not None:
            for t in instance.tables:
                if t.name == table:
                    return t.rows
        return 50_000

    def _plan_for(self, workload: Workload, sql: str) -> PlanTree | None:
        profile = _statement_profile(sql)
        if profile is None:
            return None
        tables = profile["tables"] or ["unknown"]
        scans = []
        for k, t in enumerate(tables):
            rows = self._table_rows(workload, t)
            cost = round(rows / 1000.0, 1)
            if profile["predicates"] > 0 and k == 0:
                scans.append(PlanTree("IdxScan", round(cost * 0.4, 1)))
            else:
                scans.append(PlanTree("SeqScan", cost))
        node = scans[0]
        for scan in scans[1:]:
            node = PlanTree("HashJoin", round((node.estimated_cost + scan.estimated_cost) * 1.15 + 7.5, 1),
                            (node, scan))
        if profile["group_by"] or profile["aggregation"]:
            node = PlanTree("Agg", round(node.estimated_cost * 1.1 + 5.0, 1), (node,))
        if profile["order_by"]:
            node = PlanTree("Sort", round(node.estimated_cost * 1.2 + 10.0, 1), (node,))
        if not profile["is_read"]:
            node = PlanTree("ModifyTable", round(node.estimated_cost + 2.5, 1), (node,))
        return node

    def explain(self, workload: Workload) -> tuple[PlanTree, ...]:
        """Deterministic plan per statement, as EXPLAIN under defaults would give."""
        if workload.kind == "OLAP":
            statements = list(workload.queries)
        else:
            templates = self.templates_for(workload)
            statements = [s for tid, _ in workload.transaction_mix
                          for s in templates[tid].statements]
        plans = [self._plan_for(workload, s) for s in statements]
        return tuple(p for p in plans if p is not None)

    def estimate_query_seconds(self, workload: Workload, sql: str) -> float:
        """Per-query runtime estimate under defaults, from the plan root cost."""
        plan = self._plan_for(workload, sql)
        if plan is None:
            return float("inf")
        return plan.estimated_cost / 5000.0

    def workload_features(self, workload: Workload, metric_ranges: dict) -> WorkloadFeatures:
        """Stats + plans + default-configuration counters, as text and vector."""
        stats = self.statistics(workload)
        plans = self.explain(workload)
        _, metrics = self.evaluate(workload, self.space.default_configuration())
        return assemble_features(stats, plans, metrics, metric_ranges)

    # --- brute-force oracle ----------------------------------------------

    def grid_optimum(self, workload: Workload, resolution: int,
                     max_points: int = 300_000) -> tuple[Configuration, PerfMetric]:
        """Exhaustive best configuration over an r-per-knob grid.

        Refuses when resolution**n exceeds max_points; intended as ground
        truth on small spaces only.
        """
        if resolution < 2:
            raise DomainError("grid resolution must be >= 2")
        n = self.space.n
        points = resolution ** n
        if points > max_points:
            raise BudgetExceededError(
                f"grid of {resolution}^{n} = {points} points exceeds budget {max_points}")
        axes = [np.linspace(0.0, 1.0, resolution) for _ in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        X = np.stack([m.ravel() for m in mesh], axis=1)
        raw_cols, Xn = _snap_columns(self.space, X)
        values = self._perf_values(workload, Xn)
        if self.noise > 0.0:
            base = self.baseline_value(workload)
            factors = np.empty(len(Xn))
            for i in range(len(Xn)):
                factors[i] = self._noise_factor(workload, _assemble_config(self.space, raw_cols, i))
            values = np.clip(values * factors, base / 10.0, base * 10.0)
        best = int(np.argmin(values) if self.orientation_for(workload) == "lower_better"
                   else np.argmax(values))
        best_cfg = _assemble_config(self.space, raw_cols, best)
        perf, _ = self.evaluate(workload, best_cfg)
        return best_cfg, perf


class InstrumentedEnv:
    """Wraps an environment, counting evaluations and accumulating the
    simulated replay time each one would cost on real hardware (full-workload
    latency for OLAP, a 1-minute stress test for OLTP)."""

    def __init__(self, env):
        self.env = env
        self.calls = 0
        self.simulated_seconds = 0.0

    def reset(self):
        self.calls = 0
        self.simulated_seconds = 0.0

    def evaluate(self, workload: Workload, cfg: Configuration):
        perf, metrics = self.env.evaluate(workload, cfg)
        self.calls += 1
        if perf.orientation == "lower_better":
            self.simulated_seconds += perf.value
        else:
            self.simulated_seconds += OLTP_STRESS_SECONDS
        return perf, metrics

    def __getattr__(self, name):
        return getattr(self.env, name)


def synthetic_metric_ranges(profile_cap: int = 6000) -> dict:
    """Emission bounds of SyntheticEnv counters, for metric normalization.

    Derived from the metric formulas with every driving factor at its
    extreme and the 5% jitter applied; values above these would clamp.
    """
    T = profile_cap * 1.05
    tup_returned = T * 2000.0
    tup_inserted = T * 120.0
    tup_updated = T * 160.0
    tup_deleted = T * 40.0
    blks_read = T * 500.0 * 1.5
    disk_read_count = 0.8 * blks_read
    disk_write_count = 0.5 * (tup_inserted + tup_updated + tup_deleted) + T * 20.0
    return {
        "xact_commit": (0.0, T),
        "xact_rollback": (0.0, T * 0.02),
        "blks_read": (0.0, blks_read),
        "blks_hit": (0.0, T * 1000.0),
        "tup_returned": (0.0, tup_returned),
        "tup_fetched": (0.0, 0.7 * tup_returned),
        "tup_inserted": (0.0, tup_inserted),
        "conflicts": (0.0, T * 0.01),
        "tup_updated": (0.0, tup_updated),
        "tup_deleted": (0.0, tup_deleted),
        "disk_read_count": (0.0, disk_read_count),
        "disk_write_count": (0.0, disk_write_count),
        "disk_read_bytes": (0.0, disk_read_count * 8192.0),
        "disk_write_bytes": (0.0, disk_write_count * 8192.0),
    }
