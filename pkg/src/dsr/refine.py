"""Schema and knowledge refinement: series consolidation, column pruning, knowledge condensation.

Large schemas often carry hundreds of structurally equivalent tables that
differ only by a date or version suffix. Refinement collapses each such
series into one canonical table carrying a generated description, prunes
columns that hold no information, and condenses external knowledge text,
producing a schema whose rendering always fits in fewer tokens than the
original.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import re
from dataclasses import dataclass, field

from .catalog import (
    ColumnDelta,
    SchemaCatalog,
    SeriesMeta,
    TableInfo,
    TokenEstimator,
    estimate_tokens,
    render,
    truncate_to_tokens,
)
from .execution import ExecBackend, ExecLimits
from .llm import LlmClient, LlmError, request
from . import prompts

logger = logging.getLogger(__name__)

SERIES_SIMILARITY_THRESHOLD = 0.9
DEFAULT_PLACEHOLDERS = ("", "n/a", "null")
SERIES_DESCRIPTION_BUDGET = 400

# Trailing date-like (4-8 digits) or version (v<digits>) token after an underscore.
_SUFFIX_RE = re.compile(r"_(\d{4,8}|[vV]\d+)$")


@dataclass
class RefineConfig:
    sample_rows: int = 100
    placeholders: tuple[str, ...] = DEFAULT_PLACEHOLDERS
    knowledge_budget: int = 4000
    similarity_threshold: float = SERIES_SIMILARITY_THRESHOLD


@dataclass
class RefinedSchema:
    """The reduced catalog plus provenance: where every original table went."""

    catalog: SchemaCatalog
    provenance: dict[str, SeriesMeta] = field(default_factory=dict)
    pruned_columns: dict[str, list[str]] = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class RefinedKnowledge:
    text: str
    source_digest: str

    @classmethod
    def of(cls, text: str, source: str) -> "RefinedKnowledge":
        return cls(text=text, source_digest=hashlib.sha256(source.encode("utf-8")).hexdigest())


def split_series_name(name: str) -> tuple[str, str] | None:
    """(prefix, suffix) when the name carries a series suffix, else None."""
    match = _SUFFIX_RE.search(name)
    if match is None:
        return None
    return name[: match.start()], match.group(1)


def _suffix_sort_key(suffix: str) -> int:
    return int(suffix.lstrip("vV"))


def _suffix_placeholder(suffix: str) -> str:
    return "[VERSION]" if suffix[0] in "vV" else "[DATE]"


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def detect_table_series(
    catalog: SchemaCatalog, threshold: float = SERIES_SIMILARITY_THRESHOLD
) -> list[SeriesMeta]:
    """Partition the catalog into suffix series and singletons.

    Tables group when their names agree after stripping a trailing
    date/version token and their column-name sets stay within ``threshold``
    Jaccard similarity of the canonical layout (the member with the largest
    suffix). Groups are disjoint by construction.
    """
    groups: dict[str, list[tuple[str, TableInfo]]] = {}
    for table in catalog.tables:
        parts = split_series_name(table.name)
        if parts is None:
            continue
        prefix, suffix = parts
        groups.setdefault(prefix.casefold(), []).append((suffix, table))

    series: list[SeriesMeta] = []
    for members in groups.values():
        if len(members) < 2:
            continue
        members.sort(key=lambda pair: _suffix_sort_key(pair[0]))
        canonical_suffix, canonical = members[-1]
        canonical_cols = {c.casefold() for c in canonical.column_names()}
        kept = [
            (suffix, table)
            for suffix, table in members
            if _jaccard({c.casefold() for c in table.column_names()}, canonical_cols) >= threshold
        ]
        if len(kept) < 2:
            continue
        prefix = canonical.name[: -len(canonical_suffix) - 1]
        deltas: dict[str, ColumnDelta] = {}
        for _, table in kept:
            cols = {c.casefold() for c in table.column_names()}
            added = sorted(
                c for c in table.column_names() if c.casefold() not in canonical_cols
            )
            removed = sorted(
                c for c in canonical.column_names() if c.casefold() not in cols
            )
            if added or removed:
                deltas[table.name] = ColumnDelta(added=added, removed=removed)
        series.append(
            SeriesMeta(
                pattern=f"{prefix}_{_suffix_placeholder(canonical_suffix)}",
                members=[table.name for _, table in kept],
                suffix_range=(kept[0][0], kept[-1][0]),
                column_deltas=deltas,
            )
        )
    series.sort(key=lambda s: s.pattern.casefold())
    return series


def _mechanical_description(series: SeriesMeta) -> str:
    lo, hi = series.suffix_range
    base = f"{series.pattern}, suffix range {lo}-{hi}"
    if not series.column_deltas:
        return f"{base}, identical layouts"
    notes = []
    for member in series.members:
        delta = series.column_deltas.get(member)
        if delta is None:
            continue
        pieces = []
        if delta.added:
            pieces.append("adds " + ", ".join(delta.added))
        if delta.removed:
            pieces.append("lacks " + ", ".join(delta.removed))
        notes.append(f"{member} {'; '.join(pieces)}")
    return f"{base}; layout differences: {'; '.join(notes)}"


def describe_series(
    series: SeriesMeta,
    columns: list[str],
    llm: LlmClient,
    prompt_set: prompts.PromptSet | None = None,
) -> str:
    """Non-empty description of a series: naming convention, suffix range, deltas.

    Falls back to a mechanical rendering of the series metadata when the
    model call fails or returns nothing.
    """
    prompt_set = prompt_set or prompts.PromptSet()
    lo, hi = series.suffix_range
    deltas = "none" if not series.column_deltas else "; ".join(
        f"{member}: +{d.added or []} -{d.removed or []}"
        for member, d in sorted(series.column_deltas.items())
    )
    prompt = prompt_set.series_description.format(
        pattern=series.pattern,
        lo=lo,
        hi=hi,
        count=len(series.members),
        columns=", ".join(columns),
        deltas=deltas,
    )
    try:
        reply = llm.complete(request(prompt, tag="refine.describe_series")).strip()
    except LlmError:
        reply = ""
    if not reply:
        return _mechanical_description(series)
    return truncate_to_tokens(reply, SERIES_DESCRIPTION_BUDGET)


def _consolidate(
    catalog: SchemaCatalog, series_list: list[SeriesMeta], llm: LlmClient | None,
    prompt_set: prompts.PromptSet | None = None,
) -> tuple[list[TableInfo], dict[str, SeriesMeta], list[str]]:
    member_to_canonical: dict[str, str] = {}
    canonical_names: dict[str, SeriesMeta] = {}
    for series in series_list:
        canonical = series.members[-1]
        canonical_names[canonical.casefold()] = series
        for member in series.members:
            member_to_canonical[member.casefold()] = canonical

    warnings: list[str] = []
    tables: list[TableInfo] = []
    provenance: dict[str, SeriesMeta] = {}
    for table in catalog.tables:
        key = table.name.casefold()
        if key in member_to_canonical and key not in canonical_names:
            continue
        new_table = copy.deepcopy(table)
        series = canonical_names.get(key)
        if series is not None:
            new_table.series_meta = series
            provenance[table.name] = series
            if llm is not None:
                new_table.description = describe_series(
                    series, table.column_names(), llm, prompt_set
                )
            else:
                new_table.description = _mechanical_description(series)
        tables.append(new_table)

    # Rewrite foreign keys that pointed at consolidated members; drop the ones
    # whose target column does not exist in the canonical layout.
    by_name = {t.name.casefold(): t for t in tables}
    for table in tables:
        kept = []
        for fk in table.foreign_keys:
            target_key = fk.ref_table.casefold()
            if target_key not in by_name and target_key in member_to_canonical:
                canonical = member_to_canonical[target_key]
                target = by_name.get(canonical.casefold())
                if target is not None and target.column(fk.ref_column) is not None:
                    fk.ref_table = target.name
                else:
                    warnings.append(
                        f"dropped foreign key {table.name}.{fk.column} -> "
                        f"{fk.ref_table}.{fk.ref_column}: target consolidated away"
                    )
                    continue
            kept.append(fk)
        table.foreign_keys = kept
    return tables, provenance, warnings


def _key_columns(catalog: SchemaCatalog) -> dict[str, set[str]]:
    """Per table, the columns that participate in a primary or foreign key."""
    keys: dict[str, set[str]] = {t.name.casefold(): set() for t in catalog.tables}
    for table in catalog.tables:
        mine = keys[table.name.casefold()]
        mine.update(c.casefold() for c in table.primary_key)
        for fk in table.foreign_keys:
            mine.add(fk.column.casefold())
            target = keys.get(fk.ref_table.casefold())
            if target is not None:
                target.add(fk.ref_column.casefold())
    return keys


def _quote(name: str) -> str:
    return ".".join('"' + part.replace('"', '""') + '"' for part in name.split("."))


def prune_uninformative_columns(
    catalog: SchemaCatalog,
    exec_backend: ExecBackend,
    sample_rows: int = 100,
    placeholders: tuple[str, ...] = DEFAULT_PLACEHOLDERS,
) -> RefinedSchema:
    """Drop columns whose sampled values are all NULL or one repeated placeholder.

    Key columns are never pruned: removing a join key would leave the refined
    schema semantically unfaithful. Tables whose sampling fails are left
    untouched, with a warning recorded.
    """
    placeholder_set = {p.casefold() for p in placeholders}
    keys = _key_columns(catalog)
    warnings: list[str] = []
    pruned: dict[str, list[str]] = {}
    tables: list[TableInfo] = []

    for table in catalog.tables:
        new_table = copy.deepcopy(table)
        result = exec_backend.execute(
            f"SELECT * FROM {_quote(table.name)} LIMIT {int(sample_rows)}",
            ExecLimits(timeout=30.0, row_cap=max(1, sample_rows)),
        )
        if result.error is not None:
            warnings.append(f"could not sample table {table.name!r}: {result.error.message}")
            tables.append(new_table)
            continue
        if not result.rows:
            tables.append(new_table)
            continue
        col_index = {name.casefold(): i for i, name in enumerate(result.columns)}
        exempt = keys.get(table.name.casefold(), set())
        removed: list[str] = []
        kept = []
        for col in new_table.columns:
            idx = col_index.get(col.name.casefold())
            if idx is None or col.name.casefold() in exempt:
                kept.append(col)
                continue
            values = [row[idx] for row in result.rows]
            if _is_uninformative(values, placeholder_set):
                removed.append(col.name)
            else:
                kept.append(col)
        if removed:
            new_table.columns = kept
            pruned[table.name] = removed
        tables.append(new_table)

    refined_catalog = SchemaCatalog(
        db_id=catalog.db_id,
        tables=tables,
        knowledge=catalog.knowledge,
        warnings=list(catalog.warnings),
    )
    return RefinedSchema(catalog=refined_catalog, pruned_columns=pruned, warnings=warnings)


def _is_uninformative(values: list, placeholder_set: set[str]) -> bool:
    if all(v is None for v in values):
        return True
    if any(v is None for v in values):
        return False
    distinct = {str(v).strip().casefold() for v in values}
    return len(distinct) == 1 and next(iter(distinct)) in placeholder_set


def refine_knowledge(
    knowledge: str | None,
    question: str | None,
    llm: LlmClient | None,
    *,
    budget: int = 4000,
    estimator: TokenEstimator = estimate_tokens,
    prompt_set: prompts.PromptSet | None = None,
) -> RefinedKnowledge:
    """Condense knowledge text; the result never estimates larger than the input.

    Text already under the budget passes through unchanged. On model failure
    the input is truncated to the budget instead.
    """
    source = knowledge or ""
    if not source:
        return RefinedKnowledge.of("", source)
    if estimator(source) <= budget:
        return RefinedKnowledge.of(source, source)
    if llm is None:
        return RefinedKnowledge.of(truncate_to_tokens(source, budget, estimator), source)
    prompt_set = prompt_set or prompts.PromptSet()
    question_clause = f" for the question {question!r}" if question else ""
    prompt = prompt_set.knowledge_summary.format(
        question_clause=question_clause, knowledge=source
    )
    try:
        summary = llm.complete(request(prompt, tag="refine.knowledge")).strip()
    except LlmError:
        return RefinedKnowledge.of(truncate_to_tokens(source, budget, estimator), source)
    if not summary or estimator(summary) > estimator(source):
        summary = truncate_to_tokens(source, budget, estimator)
    return RefinedKnowledge.of(summary, source)


def refine_schema(
    catalog: SchemaCatalog,
    exec_backend: ExecBackend | None,
    llm: LlmClient | None,
    config: RefineConfig | None = None,
) -> tuple[RefinedSchema, RefinedKnowledge]:
    """Full refinement: consolidate series, describe them, prune, condense knowledge.

    Passing ``exec_backend=None`` skips pruning (schema-only workflows); the
    skip is recorded as a warning.
    """
    config = config or RefineConfig()
    series_list = detect_table_series(catalog, config.similarity_threshold)
    tables, provenance, fk_warnings = _consolidate(catalog, series_list, llm)
    consolidated = SchemaCatalog(
        db_id=catalog.db_id,
        tables=tables,
        knowledge=catalog.knowledge,
        warnings=list(catalog.warnings),
    )

    if exec_backend is not None:
        refined = prune_uninformative_columns(
            consolidated, exec_backend, config.sample_rows, config.placeholders
        )
    else:
        refined = RefinedSchema(catalog=consolidated, warnings=["pruning skipped: no exec backend"])
    refined.provenance = provenance
    refined.warnings.extend(fk_warnings)

    # Contract: refinement never grows the rendering. Series descriptions add
    # text, so on pathological tiny schemas fall back to the original.
    before = estimate_tokens(render(catalog.view()))
    after = estimate_tokens(render(refined.catalog.view()))
    if after > before:
        logger.warning(
            "refinement grew %s from %d to %d tokens; keeping the original schema",
            catalog.db_id, before, after,
        )
        refined = RefinedSchema(
            catalog=catalog,
            warnings=refined.warnings + ["refinement grew the schema; kept the original"],
        )

    knowledge = refine_knowledge(
        catalog.knowledge, None, llm, budget=config.knowledge_budget
    )
    return refined, knowledge


def refined_to_dict(refined: RefinedSchema) -> dict:
    from .catalog import catalog_to_dict, _series_to_dict

    return {
        "catalog": catalog_to_dict(refined.catalog),
        "provenance": {k: _series_to_dict(v) for k, v in refined.provenance.items()},
        "pruned_columns": refined.pruned_columns,
        "dropped": refined.dropped,
        "warnings": refined.warnings,
    }


def refined_from_dict(data: dict) -> RefinedSchema:
    from .catalog import catalog_from_dict, series_from_dict

    return RefinedSchema(
        catalog=catalog_from_dict(data["catalog"]),
        provenance={k: series_from_dict(v) for k, v in data.get("provenance", {}).items()},
        pruned_columns={k: list(v) for k, v in data.get("pruned_columns", {}).items()},
        dropped=list(data.get("dropped", [])),
        warnings=list(data.get("warnings", [])),
    )
