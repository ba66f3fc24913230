"""Synthetic database instances: schemas, sample data, transaction templates.

An instance is a named schema family (tables, columns, row counts, sampled
column values) built deterministically from a seed. OLAP families feed the
query generators; OLTP families additionally define five transaction
templates in the classic order-processing mold (delivery, new_order,
order_status, payment, stock_level) whose mix weights are varied to produce
distinct workloads.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DomainError
from .features import TransactionTemplate
from .seeding import rng_for

_TABLE_POOL = (
    "customers", "orders", "order_items", "products", "suppliers", "shipments",
    "payments", "accounts", "inventory", "regions", "employees", "invoices",
    "reviews", "categories", "warehouses", "returns", "sessions", "campaigns",
    "stores", "deliveries",
)

_COLUMN_POOL = (
    ("amount", "numeric"), ("quantity", "integer"), ("price", "numeric"),
    ("status", "text"), ("name", "text"), ("city", "text"),
    ("created_at", "timestamp"), ("updated_at", "timestamp"),
    ("total", "numeric"), ("balance", "numeric"), ("discount", "numeric"),
    ("priority", "integer"), ("stock", "integer"), ("weight", "numeric"),
    ("active", "boolean"), ("category", "text"), ("region", "text"),
    ("score", "integer"), ("note", "text"), ("tier", "integer"),
)

_TEXT_VALUES = ("new", "open", "closed", "pending", "shipped", "failed",
                "gold", "silver", "bronze", "east", "west", "north", "south")


@dataclass(frozen=True)
class Column:
    name: str
    sql_type: str
    sample_values: tuple


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    rows: int

    def ddl(self) -> str:
        cols = ", ".join(f"{c.name} {c.sql_type}" for c in self.columns)
        return f"CREATE TABLE {self.name} ({cols});"


@dataclass(frozen=True)
class SchemaInstance:
    name: str
    kind: str  # OLAP or OLTP
    tables: tuple[Table, ...]

    def __post_init__(self):
        if not self.tables:
            raise DomainError(f"instance {self.name!r} has no tables")

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def ddl(self) -> list[str]:
        return [t.ddl() for t in self.tables]


def _sample_values(rng, sql_type: str) -> tuple:
    if sql_type == "integer":
        return tuple(int(v) for v in sorted(rng.integers(1, 5000, size=4)))
    if sql_type == "numeric":
        return tuple(round(float(v), 2) for v in sorted(rng.uniform(1.0, 9000.0, size=4)))
    if sql_type == "boolean":
        return (True, False)
    if sql_type == "timestamp":
        days = sorted(int(v) for v in rng.integers(1, 28, size=3))
        return tuple(f"2024-{m:02d}-{d:02d}" for m, d in zip((1, 5, 9), days))
    return tuple(sorted(rng.choice(_TEXT_VALUES, size=4, replace=False)))


def make_instance(name: str, kind: str, n_tables: int, seed: int) -> SchemaInstance:
    """Build a deterministic schema instance with n_tables tables."""
    if kind not in ("OLAP", "OLTP"):
        raise DomainError(f"instance kind {kind!r} must be OLAP or OLTP")
    if not 1 <= n_tables <= len(_TABLE_POOL):
        raise DomainError(f"n_tables must be in 1..{len(_TABLE_POOL)}")
    rng = rng_for("instance", name, seed)
    table_names = [str(t) for t in rng.choice(_TABLE_POOL, size=n_tables, replace=False)]
    tables = []
    for tname in table_names:
        n_cols = int(rng.integers(4, 9))
        picks = rng.choice(len(_COLUMN_POOL), size=n_cols, replace=False)
        columns = [Column(name="id", sql_type="integer",
                          sample_values=_sample_values(rng, "integer"))]
        for p in picks:
            cname, ctype = _COLUMN_POOL[int(p)]
            columns.append(Column(name=cname, sql_type=ctype,
                                  sample_values=_sample_values(rng, ctype)))
        rows = int(rng.integers(10_000, 5_000_000))
        tables.append(Table(name=tname, columns=tuple(columns), rows=rows))
    return SchemaInstance(name=name, kind=kind, tables=tuple(tables))


def _numeric_column(table: Table) -> str:
    for c in table.columns:
        if c.sql_type in ("numeric", "integer") and c.name != "id":
            return c.name
    return "id"


def transaction_templates(instance: SchemaInstance) -> dict:
    """Five order-processing transaction templates over an OLTP instance."""
    if instance.kind != "OLTP":
        raise DomainError(f"instance {instance.name!r} is not OLTP")
    tables = list(instance.tables)
    # cycle if the schema is narrow
    t = [tables[i % len(tables)] for i in range(5)]
    v = [_numeric_column(x) for x in t]
    templates = [
        TransactionTemplate(id="new_order", statements=(
            f"SELECT {v[0]} FROM {t[0].name} WHERE id = 42",
            f"INSERT INTO {t[1].name} (id, {v[1]}) VALUES (1, 2)",
            f"UPDATE {t[2].name} SET {v[2]} = {v[2]} + 1 WHERE id = 42",
        )),
        TransactionTemplate(id="payment", statements=(
            f"UPDATE {t[0].name} SET {v[0]} = {v[0]} - 1 WHERE id = 42",
            f"INSERT INTO {t[3].name} (id, {v[3]}) VALUES (7, 3)",
        )),
        TransactionTemplate(id="order_status", statements=(
            f"SELECT a.{v[0]}, b.{v[1]} FROM {t[0].name} a JOIN {t[1].name} b "
            f"ON a.id = b.id WHERE a.id = 42 ORDER BY b.{v[1]}",
        )),
        TransactionTemplate(id="delivery", statements=(
            f"UPDATE {t[1].name} SET {v[1]} = 0 WHERE id < 100",
            f"DELETE FROM {t[4].name} WHERE id = 42",
            f"SELECT {v[4]} FROM {t[4].name} WHERE id > 10",
        )),
        TransactionTemplate(id="stock_level", statements=(
            f"SELECT COUNT(*) FROM {t[2].name} WHERE {v[2]} < 50",
        )),
    ]
    return {tpl.id: tpl for tpl in templates}
