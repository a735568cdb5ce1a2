"""Relational schema catalog: ingestion, M-Schema / DDL rendering, token estimation.

A SchemaCatalog describes one database: its tables, columns, key
relationships, value examples, and optional external knowledge text.
Views over a catalog render to M-Schema (rich, with descriptions and
examples) or DDL (column names and types only); both renderings are
byte-deterministic so they can be budgeted, cached, and golden-tested.
"""

from __future__ import annotations

import json
import math
import random
import re
import sqlite3
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

CATALOG_FORMAT_VERSION = 1

MAX_EXAMPLE_LENGTH = 50
MAX_EXAMPLES_PER_COLUMN = 3

TokenEstimator = Callable[[str], int]


class CatalogError(ValueError):
    """A catalog, view, or ingestion input violates its invariants."""


def estimate_tokens(text: str) -> int:
    """Estimate the token count of ``text``.

    Character-class heuristic: roughly 4 ASCII characters per token, one
    token per non-ASCII character. Deterministic, monotone under
    concatenation, and 0 for empty text. Swap in a real tokenizer via the
    ``TokenEstimator`` callable type where finer counts matter.
    """
    if not text:
        return 0
    ascii_count = sum(1 for ch in text if ord(ch) < 128)
    return math.ceil(ascii_count / 4) + (len(text) - ascii_count)


def truncate_to_tokens(text: str, budget: int, estimator: TokenEstimator = estimate_tokens) -> str:
    """Longest prefix of ``text`` whose estimate fits ``budget`` (monotone estimators only)."""
    if budget <= 0:
        return ""
    if estimator(text) <= budget:
        return text
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if estimator(text[:mid]) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo]


def _normalize_examples(examples: Iterable[str]) -> list[str]:
    # Truncate first so two long values sharing a 50-char prefix dedupe together.
    seen: list[str] = []
    for value in examples:
        value = str(value)[:MAX_EXAMPLE_LENGTH]
        if value not in seen:
            seen.append(value)
    return seen[:MAX_EXAMPLES_PER_COLUMN]


@dataclass
class ColumnInfo:
    """One column: name, declared type, optional description, sampled example values."""

    name: str
    sql_type: str
    description: str | None = None
    examples: list[str] = field(default_factory=list)
    nullable: bool = True

    def __post_init__(self) -> None:
        self.examples = _normalize_examples(self.examples)


@dataclass
class ForeignKey:
    column: str
    ref_table: str
    ref_column: str


@dataclass
class ColumnDelta:
    """Column-set difference of one series member against the canonical layout."""

    added: list[str] = field(default_factory=list)
    removed: list[str] = field(default_factory=list)


@dataclass
class SeriesMeta:
    """A family of structurally equivalent tables differing only by a name suffix."""

    pattern: str
    members: list[str]
    suffix_range: tuple[str, str]
    column_deltas: dict[str, ColumnDelta] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise CatalogError("a table series needs at least two members")


@dataclass
class TableInfo:
    """One table: ordered columns, key relationships, optional description and series metadata."""

    name: str
    columns: list[ColumnInfo] = field(default_factory=list)
    description: str | None = None
    primary_key: list[str] = field(default_factory=list)
    foreign_keys: list[ForeignKey] = field(default_factory=list)
    series_meta: SeriesMeta | None = None

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for col in self.columns:
            key = col.name.casefold()
            if key in seen:
                raise CatalogError(f"duplicate column {col.name!r} in table {self.name!r}")
            seen.add(key)

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> ColumnInfo | None:
        want = name.casefold()
        for col in self.columns:
            if col.name.casefold() == want:
                return col
        return None


@dataclass
class SchemaCatalog:
    """Full description of one database, plus optional external knowledge text."""

    db_id: str
    tables: list[TableInfo] = field(default_factory=list)
    knowledge: str | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        seen: set[str] = set()
        for table in self.tables:
            key = table.name.casefold()
            if key in seen:
                raise CatalogError(f"duplicate table name {table.name!r}")
            seen.add(key)
        by_name = {t.name.casefold(): t for t in self.tables}
        for table in self.tables:
            for fk in table.foreign_keys:
                target = by_name.get(fk.ref_table.casefold())
                if target is None:
                    raise CatalogError(
                        f"foreign key {table.name}.{fk.column} references unknown table {fk.ref_table!r}"
                    )
                if target.column(fk.ref_column) is None:
                    raise CatalogError(
                        f"foreign key {table.name}.{fk.column} references unknown column "
                        f"{fk.ref_table}.{fk.ref_column}"
                    )

    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def table(self, name: str) -> TableInfo | None:
        want = name.casefold()
        for t in self.tables:
            if t.name.casefold() == want:
                return t
        return None

    def view(
        self,
        tables: Sequence[str] | None = None,
        columns: dict[str, Sequence[str]] | None = None,
        fmt: "RenderFormat | str" = "MSCHEMA",
    ) -> "SchemaView":
        return SchemaView(self, list(tables) if tables is not None else None, columns, RenderFormat(fmt))


class RenderFormat(str, Enum):
    MSCHEMA = "MSCHEMA"
    DDL = "DDL"


class SchemaView:
    """A renderable subset of a catalog: table subset, optional per-table column filter."""

    def __init__(
        self,
        catalog: SchemaCatalog,
        tables: Sequence[str] | None = None,
        columns: dict[str, Sequence[str]] | None = None,
        fmt: RenderFormat = RenderFormat.MSCHEMA,
    ) -> None:
        self.catalog = catalog
        self.fmt = RenderFormat(fmt)
        if tables is None:
            self.tables = catalog.table_names()
        else:
            resolved = []
            for name in tables:
                table = catalog.table(name)
                if table is None:
                    raise CatalogError(f"view includes unknown table {name!r}")
                resolved.append(table.name)
            self.tables = resolved
        self.columns: dict[str, list[str]] = {}
        for name, cols in (columns or {}).items():
            table = catalog.table(name)
            if table is None or table.name not in self.tables:
                raise CatalogError(f"column filter names table {name!r} outside the view")
            kept = []
            for col in cols:
                info = table.column(col)
                if info is None:
                    raise CatalogError(f"column filter names unknown column {name}.{col}")
                kept.append(info.name)
            self.columns[table.name] = kept

    def _table_columns(self, table: TableInfo) -> list[ColumnInfo]:
        keep = self.columns.get(table.name)
        if keep is None:
            return table.columns
        want = {c.casefold() for c in keep}
        return [c for c in table.columns if c.name.casefold() in want]


def _one_line(text: str) -> str:
    # Keep `# Table:` / header parsing line-based: descriptions never introduce new lines.
    return " ".join(text.split())


def _render_column_tuple(col: ColumnInfo) -> str:
    parts = [f"({col.name}: {col.sql_type}"]
    if col.description:
        parts.append(f", {_one_line(col.description)}")
    if col.examples:
        parts.append(f", Examples: [{', '.join(col.examples)}]")
    parts.append(")")
    return "".join(parts)


def render(view: SchemaView) -> str:
    """Render a view as M-Schema or DDL text. Byte-deterministic for a given view."""
    if view.fmt is RenderFormat.DDL:
        return _render_ddl(view)
    return _render_mschema(view)


def _render_mschema(view: SchemaView) -> str:
    lines = [f"[DB_ID] {view.catalog.db_id}", ""]
    for name in view.tables:
        table = view.catalog.table(name)
        assert table is not None
        lines.append(f"# Table: {table.name}")
        lines.append("[")
        for col in view._table_columns(table):
            lines.append(_render_column_tuple(col) + ",")
        lines.append("]")
        if table.description:
            lines.append(f"# Table Description: {_one_line(table.description)}")
        lines.append("")
    return "\n".join(lines)


def _render_ddl(view: SchemaView) -> str:
    chunks = []
    for name in view.tables:
        table = view.catalog.table(name)
        assert table is not None
        cols = view._table_columns(table)
        body = ",\n".join(f"  {c.name} {c.sql_type}" for c in cols)
        chunks.append(f"CREATE TABLE {table.name} (\n{body}\n);")
    return "\n\n".join(chunks) + ("\n" if chunks else "")


_HEADER_RE = re.compile(r"^\[DB_ID\] (.*)$", re.MULTILINE)
_TABLE_LINE_RE = re.compile(r"^# Table: (.*)$", re.MULTILINE)


def parse_rendered_names(text: str) -> tuple[str, list[str]]:
    """Recover (db_id, table names) from rendered M-Schema text."""
    header = _HEADER_RE.search(text)
    if header is None:
        raise CatalogError("text has no [DB_ID] header line")
    return header.group(1), [m.group(1) for m in _TABLE_LINE_RE.finditer(text)]


# --- sqlite ingestion -------------------------------------------------------

def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _stringify(value: object) -> str:
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    return str(value)


def ingest_catalog(
    connection_spec: str | Path,
    sample_rows: int = 100,
    *,
    db_id: str | None = None,
    seed: int = 0,
    knowledge: str | None = None,
) -> SchemaCatalog:
    """Introspect a sqlite database file into a SchemaCatalog.

    Samples up to ``sample_rows`` rows per table to collect value examples
    (deduplicated, at most three distinct values, each truncated to 50
    characters, chosen by a seeded generator so ingestion is reproducible).
    Unreadable tables are skipped with a warning recorded on the catalog.
    """
    if sample_rows < 0:
        raise CatalogError("sample_rows must be >= 0")
    path = Path(connection_spec)
    if not path.exists():
        raise CatalogError(f"database not found: {path}")
    try:
        conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise CatalogError(f"cannot open database {path}: {exc}") from exc

    warnings: list[str] = []
    tables: list[TableInfo] = []
    try:
        names = [
            row[0]
            for row in conn.execute(
                "SELECT name FROM sqlite_master WHERE type='table' "
                "AND name NOT LIKE 'sqlite_%' ORDER BY name"
            )
        ]
        for name in names:
            try:
                tables.append(_ingest_table(conn, name, sample_rows, seed))
            except sqlite3.Error as exc:
                warnings.append(f"skipped unreadable table {name!r}: {exc}")
    finally:
        conn.close()

    return SchemaCatalog(
        db_id=db_id or path.stem,
        tables=tables,
        knowledge=knowledge,
        warnings=warnings,
    )


def _ingest_table(conn: sqlite3.Connection, name: str, sample_rows: int, seed: int) -> TableInfo:
    info_rows = conn.execute(f"PRAGMA table_info({_quote(name)})").fetchall()
    columns = [
        ColumnInfo(name=r[1], sql_type=(r[2] or "TEXT").upper(), nullable=not r[3])
        for r in info_rows
    ]
    primary_key = [r[1] for r in sorted((r for r in info_rows if r[5]), key=lambda r: r[5])]
    foreign_keys = [
        ForeignKey(column=r[3], ref_table=r[2], ref_column=r[4] or r[3])
        for r in conn.execute(f"PRAGMA foreign_key_list({_quote(name)})")
    ]

    if sample_rows > 0 and columns:
        sampled = conn.execute(
            f"SELECT * FROM {_quote(name)} LIMIT {int(sample_rows)}"
        ).fetchall()
        for idx, col in enumerate(columns):
            distinct: list[str] = []
            for row in sampled:
                value = row[idx]
                if value is None:
                    continue
                text = _stringify(value)[:MAX_EXAMPLE_LENGTH]
                if text not in distinct:
                    distinct.append(text)
            if len(distinct) > MAX_EXAMPLES_PER_COLUMN:
                rng = random.Random(f"{seed}:{name}:{col.name}")
                distinct = rng.sample(distinct, MAX_EXAMPLES_PER_COLUMN)
            col.examples = _normalize_examples(distinct)

    return TableInfo(
        name=name,
        columns=columns,
        primary_key=primary_key,
        foreign_keys=foreign_keys,
    )


# --- JSON persistence -------------------------------------------------------

def _column_to_dict(col: ColumnInfo) -> dict:
    return {
        "name": col.name,
        "sql_type": col.sql_type,
        "description": col.description,
        "examples": list(col.examples),
        "nullable": col.nullable,
    }


def _series_to_dict(meta: SeriesMeta) -> dict:
    return {
        "pattern": meta.pattern,
        "members": list(meta.members),
        "suffix_range": list(meta.suffix_range),
        "column_deltas": {
            member: {"added": d.added, "removed": d.removed}
            for member, d in meta.column_deltas.items()
        },
    }


def series_from_dict(data: dict) -> SeriesMeta:
    return SeriesMeta(
        pattern=data["pattern"],
        members=list(data["members"]),
        suffix_range=tuple(data["suffix_range"]),
        column_deltas={
            member: ColumnDelta(added=list(d["added"]), removed=list(d["removed"]))
            for member, d in data.get("column_deltas", {}).items()
        },
    )


def catalog_to_dict(catalog: SchemaCatalog) -> dict:
    return {
        "format_version": CATALOG_FORMAT_VERSION,
        "db_id": catalog.db_id,
        "knowledge": catalog.knowledge,
        "warnings": list(catalog.warnings),
        "tables": [
            {
                "name": t.name,
                "description": t.description,
                "primary_key": list(t.primary_key),
                "foreign_keys": [
                    {"column": fk.column, "ref_table": fk.ref_table, "ref_column": fk.ref_column}
                    for fk in t.foreign_keys
                ],
                "series_meta": _series_to_dict(t.series_meta) if t.series_meta else None,
                "columns": [_column_to_dict(c) for c in t.columns],
            }
            for t in catalog.tables
        ],
    }


def catalog_from_dict(data: dict) -> SchemaCatalog:
    version = data.get("format_version")
    if version != CATALOG_FORMAT_VERSION:
        raise CatalogError(f"unsupported catalog format_version: {version!r}")
    tables = []
    for t in data["tables"]:
        tables.append(
            TableInfo(
                name=t["name"],
                columns=[
                    ColumnInfo(
                        name=c["name"],
                        sql_type=c["sql_type"],
                        description=c.get("description"),
                        examples=list(c.get("examples", [])),
                        nullable=c.get("nullable", True),
                    )
                    for c in t["columns"]
                ],
                description=t.get("description"),
                primary_key=list(t.get("primary_key", [])),
                foreign_keys=[
                    ForeignKey(fk["column"], fk["ref_table"], fk["ref_column"])
                    for fk in t.get("foreign_keys", [])
                ],
                series_meta=series_from_dict(t["series_meta"]) if t.get("series_meta") else None,
            )
        )
    return SchemaCatalog(
        db_id=data["db_id"],
        tables=tables,
        knowledge=data.get("knowledge"),
        warnings=list(data.get("warnings", [])),
    )


def save_catalog(catalog: SchemaCatalog, path: str | Path) -> None:
    Path(path).write_text(json.dumps(catalog_to_dict(catalog), indent=2, sort_keys=True))


def load_catalog(path: str | Path) -> SchemaCatalog:
    return catalog_from_dict(json.loads(Path(path).read_text()))
