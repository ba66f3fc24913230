"""Workload feature extraction.

Three feature dimensions characterize a workload: aggregate SQL statistics,
serialized query plans, and 14 engine/OS counters sampled under the default
configuration. Two views are produced: a text sequence (sections in fixed
order, large numbers humanized) for sequence predictors, and a fixed-length
14-component normalized vector for the cost model. The vector length never
depends on schema or workload, so models transfer across instances.

SQL analysis is a lightweight tokenizer plus clause-scoped keyword scanner,
not a grammar: table references are counted after FROM/JOIN/INTO/UPDATE,
predicates as comparison/IN/LIKE/BETWEEN terms inside WHERE/ON/HAVING.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DomainError, ParseError

logger = logging.getLogger(__name__)

# Fixed counter order; every metric vector follows it.
METRIC_NAMES = (
    "xact_commit", "xact_rollback", "blks_read", "blks_hit",
    "tup_returned", "tup_fetched", "tup_inserted", "conflicts",
    "tup_updated", "tup_deleted", "disk_read_count", "disk_write_count",
    "disk_read_bytes", "disk_write_bytes",
)

WORKLOAD_KINDS = ("OLAP", "OLTP")

# Number of transactions expanded when profiling an OLTP mix.
OLTP_PROFILE_SIZE = 1000


@dataclass(frozen=True)
class TransactionTemplate:
    """Named transaction: an ordered list of SQL statements."""

    id: str
    statements: tuple[str, ...]


@dataclass(frozen=True)
class Workload:
    """A set of OLAP queries or a weighted OLTP transaction mix."""

    id: str
    kind: str
    benchmark: str
    queries: tuple[str, ...] = ()
    transaction_mix: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise DomainError(f"workload {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "OLAP" and not self.queries:
            raise DomainError(f"workload {self.id!r}: OLAP workload needs at least one query")
        if self.kind == "OLTP":
            total = sum(w for _, w in self.transaction_mix)
            if abs(total - 1.0) > 1e-9:
                raise DomainError(f"workload {self.id!r}: transaction weights sum to {total}, expected 1")


@dataclass(frozen=True)
class WorkloadStatistics:
    table_access_freq: dict = field(default_factory=dict)
    total_statements: int = 0
    read_statements: int = 0
    write_statements: int = 0
    read_write_ratio: float = 0.0
    avg_predicates_per_query: float = 0.0
    operator_proportions: dict = field(default_factory=dict)
    skipped_statements: int = 0

    @property
    def is_pure_read(self) -> bool:
        # With zero writes the ratio degenerates to the read count; callers
        # that care about the distinction check this flag.
        return self.write_statements == 0


@dataclass(frozen=True)
class PlanTree:
    operator: str
    estimated_cost: float
    children: tuple["PlanTree", ...] = ()

    def __post_init__(self):
        if self.estimated_cost < 0:
            raise DomainError(f"plan node {self.operator!r}: negative cost")
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.operator):
            raise DomainError(f"plan operator {self.operator!r} is not a bare identifier")


@dataclass(frozen=True)
class InternalMetrics:
    """The 14 engine/OS counters, all non-negative."""

    xact_commit: float
    xact_rollback: float
    blks_read: float
    blks_hit: float
    tup_returned: float
    tup_fetched: float
    tup_inserted: float
    conflicts: float
    tup_updated: float
    tup_deleted: float
    disk_read_count: float
    disk_write_count: float
    disk_read_bytes: float
    disk_write_bytes: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            if getattr(self, name) < 0:
                raise DomainError(f"metric {name} is negative")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in METRIC_NAMES)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class WorkloadFeatures:
    stats: WorkloadStatistics
    plans: tuple[PlanTree, ...]
    metrics: InternalMetrics
    text: str
    vector: tuple[float, ...]

    def __post_init__(self):
        if not self.text:
            raise DomainError("feature text is empty")
        if len(self.vector) != len(METRIC_NAMES):
            raise DomainError(f"feature vector length {len(self.vector)} != {len(METRIC_NAMES)}")
        for v in self.vector:
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"feature vector component {v} outside [0,1]")


# --- SQL statistics ----------------------------------------------------

_STRING_LITERAL = re.compile(r"'(?:[^']|'')*'")
_TOKEN = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*|[0-9]+(?:\.[0-9]+)?|<=|>=|<>|!=|=|<|>|\(|\)|,|\*|;")

_CLAUSE_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "ORDER", "HAVING", "LIMIT", "OFFSET",
    "JOIN", "ON", "UNION", "INTERSECT", "EXCEPT", "SET", "VALUES", "INTO",
    "RETURNING", "AND", "OR", "AS", "BY", "INNER", "LEFT", "RIGHT", "FULL",
    "OUTER", "CROSS", "USING", "NOT", "IN", "LIKE", "BETWEEN", "EXISTS",
    "NULL", "IS", "ASC", "DESC", "DISTINCT", "CASE", "WHEN", "THEN", "ELSE",
    "END",
}
_AGG_FUNCTIONS = {"COUNT", "SUM", "AVG", "MIN", "MAX"}
_COMPARISON_OPS = {"=", "<", ">", "<=", ">=", "<>", "!="}
_PREDICATE_KEYWORDS = {"IN", "LIKE", "BETWEEN"}
_READ_VERBS = {"SELECT", "WITH"}
_WRITE_VERBS = {"INSERT", "UPDATE", "DELETE"}


def _tokenize(sql: str) -> list[str]:
    return _TOKEN.findall(_STRING_LITERAL.sub("'lit'", sql))


def _statement_profile(sql: str) -> dict | None:
    """Scan one statement; None when it does not look like SQL we understand."""
    tokens = _tokenize(sql)
    if not tokens:
        return None
    verb = tokens[0].upper()
    if verb not in _READ_VERBS | _WRITE_VERBS:
        return None

    upper = [t.upper() for t in tokens]
    tables: list[str] = []
    predicates = 0
    scope = None  # None | "from" | "predicate"

    i = 0
    while i < len(tokens):
        tok = upper[i]
        if tok in ("FROM", "INTO", "JOIN"):
            scope = "from"
        elif tok == "UPDATE" and scope is None:
            scope = "from"
        elif tok in ("WHERE", "ON", "HAVING"):
            scope = "predicate"
        elif tok in ("GROUP", "ORDER", "LIMIT", "OFFSET", "SELECT", "SET",
                     "VALUES", "UNION", "INTERSECT", "EXCEPT", "RETURNING"):
            scope = None
        elif scope == "from":
            if tok == ",":
                pass
            elif tok == "(" or tok in _CLAUSE_KEYWORDS:
                scope = None  # subquery or clause; a nested FROM re-enters table scope
            elif re.match(r"[A-Za-z_]", tokens[i]):
                tables.append(tokens[i].split(".")[0].lower())
                # an alias may follow; swallow it
                if i + 1 < len(tokens) and upper[i + 1] == "AS":
                    i += 2
                elif i + 1 < len(tokens) and re.match(r"[A-Za-z_]", tokens[i + 1]) \
                        and upper[i + 1] not in _CLAUSE_KEYWORDS:
                    i += 1
                # comma-separated lists stay in table scope
                if i + 1 < len(tokens) and upper[i + 1] != ",":
                    scope = None
        elif scope == "predicate":
            if tok in _COMPARISON_OPS or tok in _PREDICATE_KEYWORDS:
                predicates += 1

        i += 1

    follows_call = [u in _AGG_FUNCTIONS and i + 1 < len(tokens) and tokens[i + 1] == "("
                    for i, u in enumerate(upper)]
    follows = lambda kw, nxt: any(u == kw and i + 1 < len(upper) and upper[i + 1] == nxt
                                  for i, u in enumerate(upper))
    return {
        "is_read": verb in _READ_VERBS,
        "tables": tables,
        "predicates": predicates,
        "order_by": follows("ORDER", "BY"),
        "group_by": follows("GROUP", "BY"),
        "aggregation": any(follows_call),
    }


def _expand_statements(workload: Workload, templates: dict | None) -> list[tuple[str, int]]:
    """Statements with multiplicities: OLAP queries once each, OLTP templates
    expanded to an integer profile of OLTP_PROFILE_SIZE transactions."""
    if workload.kind == "OLAP":
        return [(q, 1) for q in workload.queries]
    if templates is None:
        raise DomainError(f"workload {workload.id!r}: OLTP statistics need transaction templates")
    expanded = []
    for template_id, weight in workload.transaction_mix:
        if template_id not in templates:
            raise DomainError(f"workload {workload.id!r}: unknown template {template_id!r}")
        count = round(weight * OLTP_PROFILE_SIZE)
        for stmt in templates[template_id].statements:
            expanded.append((stmt, count))
    return expanded


def extract_statistics(workload: Workload, templates: dict | None = None) -> WorkloadStatistics:
    """Aggregate statement statistics for a workload.

    ``templates`` maps template id to TransactionTemplate and is required for
    OLTP workloads. Statements the scanner cannot classify are skipped with a
    warning, never fatal.
    """
    table_freq: dict[str, int] = {}
    total = 0
    reads = 0
    writes = 0
    predicates = 0
    with_order = 0
    with_group = 0
    with_agg = 0
    skipped = 0

    for sql, mult in _expand_statements(workload, templates):
        if mult <= 0:
            continue
        profile = _statement_profile(sql)
        if profile is None:
            skipped += 1
            logger.warning("workload %s: skipping unparseable statement %.60r", workload.id, sql)
            continue
        total += mult
        if profile["is_read"]:
            reads += mult
        else:
            writes += mult
        predicates += profile["predicates"] * mult
        with_order += mult if profile["order_by"] else 0
        with_group += mult if profile["group_by"] else 0
        with_agg += mult if profile["aggregation"] else 0
        for t in profile["tables"]:
            table_freq[t] = table_freq.get(t, 0) + mult

    denom = max(total, 1)
    return WorkloadStatistics(
        table_access_freq=dict(sorted(table_freq.items())),
        total_statements=total,
        read_statements=reads,
        write_statements=writes,
        read_write_ratio=reads / max(writes, 1),
        avg_predicates_per_query=predicates / denom,
        operator_proportions={
            "ORDER BY": with_order / denom,
            "GROUP BY": with_group / denom,
            "aggregation": with_agg / denom,
        },
        skipped_statements=skipped,
    )


# --- plan text codec ----------------------------------------------------
#
# Grammar (EBNF):
#   plan  = "(" operator " cost=" number { " " plan } ")"
#   operator = identifier without whitespace or parentheses
#   number   = Python float repr

def serialize_plan(plan: PlanTree) -> str:
    parts = [f"({plan.operator} cost={float(plan.estimated_cost)!r}"]
    for child in plan.children:
        parts.append(" " + serialize_plan(child))
    parts.append(")")
    return "".join(parts)


_PLAN_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_plan(text: str) -> PlanTree:
    """Parse the nested-parentheses plan format back into a tree."""
    tokens = _PLAN_TOKEN.findall(text)
    pos = 0

    def parse_node() -> PlanTree:
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != "(":
            raise ParseError(f"plan text: expected '(' at token {pos}")
        pos += 1
        if pos >= len(tokens):
            raise ParseError("plan text: truncated node")
        operator = tokens[pos]
        pos += 1
        if pos >= len(tokens) or not tokens[pos].startswith("cost="):
            raise ParseError(f"plan node {operator!r}: missing cost attribute")
        try:
            cost = float(tokens[pos][len("cost="):])
        except ValueError as exc:
            raise ParseError(f"plan node {operator!r}: bad cost {tokens[pos]!r}") from exc
        pos += 1
        children = []
        while pos < len(tokens) and tokens[pos] == "(":
            children.append(parse_node())
        if pos >= len(tokens) or tokens[pos] != ")":
            raise ParseError(f"plan node {operator!r}: missing ')'")
        pos += 1
        return PlanTree(operator=operator, estimated_cost=cost, children=tuple(children))

    node = parse_node()
    if pos != len(tokens):
        raise ParseError("plan text: trailing tokens after root node")
    return node


# --- humanized magnitudes ----------------------------------------------

_MAGNITUDE_UNITS = ((10**12, "trillion"), (10**9, "billion"), (10**6, "million"), (10**3, "thousand"))


def humanize_magnitude(n: int) -> str:
    """Render a count in order-of-magnitude form: 83438203 -> '83.4 million'."""
    if n < 0:
        raise DomainError(f"humanize_magnitude expects a non-negative value, got {n}")
    if n < 1000:
        return str(int(n))
    for divisor, unit in _MAGNITUDE_UNITS:
        if n >= divisor:
            return f"{n / divisor:.1f} {unit}"
    raise AssertionError("unreachable")


# --- text sequence -------------------------------------------------------

STATISTICS_HEADER = "[STATISTICS]"
PLANS_HEADER = "[QUERY PLANS]"
METRICS_HEADER = "[INTERNAL METRICS]"


def build_input_sequence(stats: WorkloadStatistics, plans: tuple[PlanTree, ...],
                         metrics: InternalMetrics) -> str:
    """Flatten the three feature dimensions into one deterministic text block."""
    lines = [STATISTICS_HEADER]
    lines.append(f"total statements: {humanize_magnitude(stats.total_statements)}")
    freq = ", ".join(f"{t}={humanize_magnitude(c)}" for t, c in sorted(stats.table_access_freq.items()))
    lines.append(f"table access frequency: {freq if freq else 'none'}")
    ratio = "read only" if stats.is_pure_read else f"{stats.read_write_ratio:.2f}"
    lines.append(f"read write ratio: {ratio}")
    lines.append(f"average predicates per query: {stats.avg_predicates_per_query:.2f}")
    for op in ("ORDER BY", "GROUP BY", "aggregation"):
        lines.append(f"{op} proportion: {stats.operator_proportions.get(op, 0.0):.2f}")
    lines.append(PLANS_HEADER)
    for plan in plans:
        lines.append(serialize_plan(plan))
    lines.append(METRICS_HEADER)
    for name in METRIC_NAMES:
        lines.append(f"{name}: {humanize_magnitude(int(getattr(metrics, name)))}")
    return "\n".join(lines)


# --- metric vector -------------------------------------------------------

def load_metric_ranges(path: str | Path) -> dict:
    """Load per-metric [min, max] ranges from a JSON file keyed by metric name."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return validate_metric_ranges(raw)


def validate_metric_ranges(raw: dict) -> dict:
    ranges = {}
    for name in METRIC_NAMES:
        if name not in raw:
            raise ParseError(f"metric ranges: missing {name!r}")
        lo, hi = raw[name]
        if not lo < hi:
            raise ParseError(f"metric ranges: {name!r} has empty range [{lo}, {hi}]")
        ranges[name] = (float(lo), float(hi))
    return ranges


def build_feature_vector(metrics: InternalMetrics, ranges: dict) -> tuple[float, ...]:
    """Min-max normalize the 14 counters; values outside the declared range clamp."""
    ranges = validate_metric_ranges(ranges)
    out = []
    for name in METRIC_NAMES:
        lo, hi = ranges[name]
        value = getattr(metrics, name)
        scaled = (value - lo) / (hi - lo)
        if scaled > 1.0:
            logger.warning("metric %s=%s above declared max %s; clamping", name, value, hi)
        out.append(min(1.0, max(0.0, scaled)))
    return tuple(out)


def assemble_features(stats: WorkloadStatistics, plans: tuple[PlanTree, ...],
                      metrics: InternalMetrics, ranges: dict) -> WorkloadFeatures:
    return WorkloadFeatures(
        stats=stats,
        plans=tuple(plans),
        metrics=metrics,
        text=build_input_sequence(stats, plans, metrics),
        vector=build_feature_vector(metrics, ranges),
    )
