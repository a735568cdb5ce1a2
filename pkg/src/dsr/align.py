"""Schema-aware alignment: probe the selected tables, summarize what the data looks like.

Probing is strictly read-only and entirely optional: an empty probe set
degrades the pipeline to generation without an alignment prior, nothing
breaks. Probe results are cached by (question_id, sql) so repeated or
ablated runs reuse them instead of re-executing.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .catalog import SchemaView, TokenEstimator, estimate_tokens, render, truncate_to_tokens
from .execution import ExecBackend, ExecError, ExecErrorKind, ExecLimits, ExecutionResult
from .llm import LlmClient, LlmError, request
from .select import tables_from_sql
from .sqltext import is_read_only_select, table_refs
from . import prompts


@dataclass
class ProbeQuery:
    sql: str
    purpose: str = "exploration"


@dataclass
class AlignmentSummary:
    text: str
    probe_count: int = 0


@dataclass
class AlignConfig:
    max_probes: int = 5
    summary_token_cap: int = 2000
    probe_row_cap: int = 20
    probe_timeout: float = 10.0


def _probe_purpose(sql: str) -> str:
    lowered = sql.lower()
    if "distinct" in lowered:
        return "value-distribution"
    if "join" in lowered:
        return "join-pattern"
    if "count(" in lowered:
        return "row-count"
    return "exploration"


def generate_probes(
    question: str,
    s_sub: SchemaView,
    llm: LlmClient,
    max_probes: int = 5,
    prompt_set: prompts.PromptSet | None = None,
) -> list[ProbeQuery]:
    """Ask for read-only probes over the selected tables.

    Anything that is not a single SELECT, or that references a table outside
    the selection, is dropped. A model failure yields an empty list.
    """
    if max_probes < 1:
        raise ValueError("max_probes must be >= 1")
    prompt_set = prompt_set or prompts.PromptSet()
    prompt = prompt_set.probes.format(
        question=question, schema=render(s_sub), max_probes=max_probes
    )
    try:
        reply = llm.complete(request(prompt, tag="align.probes"))
    except LlmError:
        return []

    from .sqltext import extract_sql_statements

    allowed = set(s_sub.tables)
    probes: list[ProbeQuery] = []
    for sql in extract_sql_statements(reply):
        if not is_read_only_select(sql):
            continue
        refs = table_refs(sql)
        if refs and len(tables_from_sql(sql, allowed)) != len(refs):
            continue  # references something outside the selection
        probes.append(ProbeQuery(sql=sql, purpose=_probe_purpose(sql)))
        if len(probes) >= max_probes:
            break
    return probes


class ProbeCache:
    """Probe results keyed by (question_id, sql), persisted as JSON lines."""

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path else None
        self._entries: dict[tuple[str, str], ExecutionResult] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    key = (record["question_id"], record["sql"])
                    self._entries[key] = _result_from_record(record)

    def get(self, question_id: str, sql: str) -> ExecutionResult | None:
        with self._lock:
            return self._entries.get((question_id, sql))

    def put(self, question_id: str, sql: str, result: ExecutionResult) -> None:
        record = probe_record(question_id, sql, result)
        with self._lock:
            if (question_id, sql) in self._entries:
                return
            self._entries[(question_id, sql)] = result
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


def probe_record(question_id: str, sql: str, result: ExecutionResult) -> dict:
    """JSON-line form of one probe outcome: {question_id, sql, columns, rows, error}."""
    return {
        "question_id": question_id,
        "sql": sql,
        "columns": result.columns,
        "rows": [list(row) for row in result.rows],
        "truncated": result.truncated,
        "error": (
            {"kind": result.error.kind.value, "message": result.error.message}
            if result.error
            else None
        ),
    }


def _result_from_record(record: dict) -> ExecutionResult:
    error = record.get("error")
    return ExecutionResult(
        columns=list(record.get("columns", [])),
        rows=[tuple(row) for row in record.get("rows", [])],
        truncated=record.get("truncated", False),
        error=ExecError(ExecErrorKind(error["kind"]), error["message"]) if error else None,
    )


def run_probes(
    probes: list[ProbeQuery],
    exec_backend: ExecBackend,
    per_probe_row_cap: int = 20,
    timeout: float = 10.0,
    *,
    cache: ProbeCache | None = None,
    question_id: str = "",
) -> list[tuple[ProbeQuery, ExecutionResult]]:
    """Execute probes under a row cap and timeout; failures never abort the batch.

    Results come back in probe order regardless of completion order.
    """
    limits = ExecLimits(timeout=timeout, row_cap=per_probe_row_cap)

    def _run(probe: ProbeQuery) -> ExecutionResult:
        if cache is not None:
            hit = cache.get(question_id, probe.sql)
            if hit is not None:
                return hit
        result = exec_backend.execute(probe.sql, limits)
        if cache is not None:
            cache.put(question_id, probe.sql, result)
        return result

    if not probes:
        return []
    with ThreadPoolExecutor(max_workers=min(4, len(probes))) as pool:
        results = list(pool.map(_run, probes))
    return list(zip(probes, results))


def _format_probe_results(
    probe_results: list[tuple[ProbeQuery, ExecutionResult]], row_cap: int = 10
) -> str:
    chunks = []
    for probe, result in probe_results:
        chunks.append(f"-- {probe.purpose}\n{probe.sql}\n{result.to_tsv(max_rows=row_cap)}")
    return "\n\n".join(chunks)


def summarize_alignment(
    question: str,
    probe_results: list[tuple[ProbeQuery, ExecutionResult]],
    llm: LlmClient,
    *,
    token_cap: int = 2000,
    estimator: TokenEstimator = estimate_tokens,
    prompt_set: prompts.PromptSet | None = None,
) -> AlignmentSummary:
    """Condense probe results into a short prior for the generator.

    Empty probe results produce an empty summary without a model call; a
    model failure falls back to a mechanical digest of the probes.
    """
    if not probe_results:
        return AlignmentSummary(text="", probe_count=0)
    prompt_set = prompt_set or prompts.PromptSet()
    prompt = prompt_set.summarize.format(
        question=question, probe_results=_format_probe_results(probe_results)
    )
    try:
        text = llm.complete(request(prompt, tag="align.summarize")).strip()
    except LlmError:
        text = _format_probe_results(probe_results, row_cap=3)
    return AlignmentSummary(
        text=truncate_to_tokens(text, token_cap, estimator),
        probe_count=len(probe_results),
    )
