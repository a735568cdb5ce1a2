"""Adaptive schema selection: pick the question-relevant table subset under a token budget.

Control flow over a refined schema with tables T':

  1. A single table is its own selection; no model calls.
  2. Otherwise render the whole schema as M-Schema. If that exceeds the
     budget, re-render as DDL. If even the DDL exceeds the budget, ask about
     every table independently (in parallel); otherwise sample k candidate
     queries over the fitting rendering and union their table references.
  3. Re-render the candidates and sample once more for the final subset.
  4. Emit a column-level view of the final tables.

The schema text placed in any single request never exceeds the budget: the
per-table fallback sends one table at a time.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .catalog import (
    RenderFormat,
    SchemaCatalog,
    SchemaView,
    TableInfo,
    TokenEstimator,
    estimate_tokens,
    render,
)
from .llm import LlmClient, LlmError, request
from .refine import RefinedSchema
from .sqltext import table_refs
from . import prompts


class SelectionError(RuntimeError):
    pass


class SelectionExhaustedError(SelectionError):
    """Every sampling call failed; no candidates could be drawn."""


class InvalidGoldError(ValueError):
    """Selection metrics need a non-empty gold table set."""


class SelectionBranch(str, Enum):
    SINGLE_TABLE = "SINGLE_TABLE"
    GLOBAL_MSCHEMA = "GLOBAL_MSCHEMA"
    GLOBAL_DDL = "GLOBAL_DDL"
    PARTITIONED = "PARTITIONED"


@dataclass
class SelectionConfig:
    k: int = 3
    theta_max: int = 96_000
    temperature: float = 1.2
    aggregation: str = "union"  # or "majority"
    partition_workers: int = 8

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.theta_max <= 0:
            raise ValueError("theta_max must be positive")
        if self.aggregation not in ("union", "majority"):
            raise ValueError("aggregation must be 'union' or 'majority'")


@dataclass
class SelectionTrace:
    branch: SelectionBranch
    candidates: list[str] = field(default_factory=list)
    final: list[str] = field(default_factory=list)
    llm_calls: int = 0
    tokens_sent: int = 0
    max_schema_tokens: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_record(self, question_id: str) -> dict:
        return {
            "question_id": question_id,
            "branch": self.branch.value,
            "tables": list(self.final),
            "llm_calls": self.llm_calls,
            "tokens_sent": self.tokens_sent,
        }


def tables_from_sql(sql: str, known_tables: set[str] | list[str]) -> set[str]:
    """Known tables referenced in FROM/JOIN positions of (possibly broken) SQL.

    Matching is case-insensitive and tolerates namespace qualification on
    either side; aliases and derived-table names never match because they are
    skipped by the reference scanner or fail the known-table lookup.
    """
    exact = {name.casefold(): name for name in known_tables}
    by_suffix: dict[str, set[str]] = {}
    for name in known_tables:
        parts = name.casefold().split(".")
        for start in range(1, len(parts)):
            by_suffix.setdefault(".".join(parts[start:]), set()).add(name)

    found: set[str] = set()
    for ref in table_refs(sql):
        key = ref.casefold()
        if key in exact:
            found.add(exact[key])
            continue
        tail = key.split(".")[-1]
        if tail != key and tail in exact:
            found.add(exact[tail])
            continue
        candidates = by_suffix.get(key)
        if candidates is not None and len(candidates) == 1:
            found.add(next(iter(candidates)))
    return found


def sample_tables(
    question: str,
    knowledge: str,
    schema_text: str,
    known_tables: set[str] | list[str],
    llm: LlmClient,
    config: SelectionConfig,
    prompt_set: prompts.PromptSet | None = None,
) -> set[str]:
    """Draw k candidate queries over the schema text, aggregate their tables.

    Aggregation is a set union by default; "majority" keeps tables named by
    at least half of the successful candidates. Raises SelectionExhaustedError
    when every call fails.
    """
    prompt_set = prompt_set or prompts.PromptSet()
    prompt = prompt_set.selection.format(
        question=question,
        knowledge_block=prompts.knowledge_block(knowledge),
        schema=schema_text,
    )
    req = request(prompt, temperature=config.temperature, tag="select.sample_tables")
    replies = llm.sample(req, config.k, skip_failures=True)
    if not replies:
        raise SelectionExhaustedError(f"all {config.k} sampling calls failed")

    per_reply = [tables_from_sql(reply, known_tables) for reply in replies]
    if config.aggregation == "majority":
        counts: dict[str, int] = {}
        for tables in per_reply:
            for name in tables:
                counts[name] = counts.get(name, 0) + 1
        return {name for name, n in counts.items() if 2 * n >= len(per_reply)}
    union: set[str] = set()
    for tables in per_reply:
        union |= tables
    return union


def partitioned_relevance(
    question: str,
    knowledge: str,
    table: TableInfo,
    catalog: SchemaCatalog,
    llm: LlmClient,
    config: SelectionConfig,
    prompt_set: prompts.PromptSet | None = None,
) -> set[str]:
    """Ask about one table in isolation; returns {table.name} or the empty set."""
    prompt_set = prompt_set or prompts.PromptSet()
    schema_text = render(catalog.view(tables=[table.name]))
    prompt = prompt_set.partitioned.format(
        question=question,
        knowledge_block=prompts.knowledge_block(knowledge),
        schema=schema_text,
    )
    req = request(prompt, temperature=config.temperature, tag="select.partitioned")
    try:
        reply = llm.complete(req)
    except LlmError:
        return set()
    return tables_from_sql(reply, {table.name})


def select_schema(
    question: str,
    refined: RefinedSchema,
    knowledge: str,
    llm: LlmClient,
    config: SelectionConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
    estimator: TokenEstimator = estimate_tokens,
) -> tuple[SchemaView, SelectionTrace]:
    """Run the full selection flow; never returns an empty view."""
    config = config or SelectionConfig()
    prompt_set = prompt_set or prompts.PromptSet()
    catalog = refined.catalog
    if not catalog.tables:
        raise SelectionError("refined schema has no tables")
    known = catalog.table_names()

    if len(known) == 1:
        trace = SelectionTrace(
            branch=SelectionBranch.SINGLE_TABLE, candidates=list(known), final=list(known)
        )
        return catalog.view(tables=known), trace

    trace = SelectionTrace(branch=SelectionBranch.GLOBAL_MSCHEMA)
    schema_text = render(catalog.view(fmt=RenderFormat.MSCHEMA))
    if estimator(schema_text) > config.theta_max:
        schema_text = render(catalog.view(fmt=RenderFormat.DDL))
        trace.branch = SelectionBranch.GLOBAL_DDL
        if estimator(schema_text) > config.theta_max:
            trace.branch = SelectionBranch.PARTITIONED

    if trace.branch is SelectionBranch.PARTITIONED:
        candidates = _partitioned_candidates(question, knowledge, catalog, llm, config, prompt_set, trace, estimator)
    else:
        trace.llm_calls += config.k
        trace.tokens_sent += config.k * estimator(schema_text)
        trace.max_schema_tokens = max(trace.max_schema_tokens, estimator(schema_text))
        candidates = sample_tables(question, knowledge, schema_text, known, llm, config, prompt_set)

    if not candidates:
        trace.warnings.append("no candidate tables named; falling back to the full table set")
        candidates = set(known)
    candidate_order = [name for name in known if name in candidates]
    trace.candidates = candidate_order

    round_two = render(catalog.view(tables=candidate_order, fmt=RenderFormat.MSCHEMA))
    if estimator(round_two) > config.theta_max:
        round_two = render(catalog.view(tables=candidate_order, fmt=RenderFormat.DDL))
    trace.llm_calls += config.k
    trace.tokens_sent += config.k * estimator(round_two)
    trace.max_schema_tokens = max(trace.max_schema_tokens, estimator(round_two))
    final = sample_tables(
        question, knowledge, round_two, candidate_order, llm, config, prompt_set
    )
    if not final:
        trace.warnings.append("final sampling named no tables; keeping the candidates")
        final = set(candidate_order)
    trace.final = [name for name in known if name in final]

    return catalog.view(tables=trace.final, fmt=RenderFormat.MSCHEMA), trace


def _partitioned_candidates(
    question: str,
    knowledge: str,
    catalog: SchemaCatalog,
    llm: LlmClient,
    config: SelectionConfig,
    prompt_set: prompts.PromptSet,
    trace: SelectionTrace,
    estimator: TokenEstimator,
) -> set[str]:
    tables = catalog.tables
    trace.llm_calls += len(tables)
    for table in tables:
        per_table = render(catalog.view(tables=[table.name]))
        tokens = estimator(per_table)
        trace.tokens_sent += tokens
        trace.max_schema_tokens = max(trace.max_schema_tokens, tokens)

    candidates: set[str] = set()
    workers = max(1, min(config.partition_workers, len(tables)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = pool.map(
            lambda t: partitioned_relevance(
                question, knowledge, t, catalog, llm, config, prompt_set
            ),
            tables,
        )
        for found in results:
            candidates |= found
    return candidates


def selection_metrics(predicted: set[str], gold: set[str]) -> tuple[float, float]:
    """(precision, recall) of a predicted table set against gold.

    Precision of an empty prediction is 1.0 by convention; an empty gold set
    is a caller error.
    """
    if not gold:
        raise InvalidGoldError("gold table set is empty")
    hit = len(predicted & gold)
    precision = 1.0 if not predicted else hit / len(predicted)
    recall = hit / len(gold)
    return precision, recall
