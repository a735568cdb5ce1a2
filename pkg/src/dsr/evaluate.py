"""Execution-accuracy evaluation: strict and lenient result comparators, dataset harness.

Strict mode requires the predicted result to match the gold result in both
content and column order. Lenient mode only requires the prediction to
contain all of the gold answer: some injective mapping from gold columns to
predicted columns must reproduce the gold rows, extra columns permitted.
Rows compare as multisets unless both queries carry a top-level ORDER BY, in
which case row order is enforced. A failed execution never matches anything.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .execution import ExecBackend, ExecLimits, ExecutionResult, SqliteBackend
from .select import selection_metrics
from .sqltext import has_order_by

REL_TOLERANCE = 1e-6


class EvaluationError(RuntimeError):
    pass


@dataclass
class DatasetItem:
    question_id: str
    db_id: str
    question: str
    evidence: str | None = None
    gold_sql: str | None = None


def load_dataset(path: str | Path) -> list[DatasetItem]:
    """Read a JSON array or JSON-lines dataset file.

    Accepts the common benchmark keys: question_id, db_id, question,
    evidence, and SQL (or gold_sql) for the reference query.
    """
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("["):
        raw = json.loads(text)
    else:
        raw = [json.loads(line) for line in text.splitlines() if line.strip()]
    items = []
    seen: set[str] = set()
    for entry in raw:
        qid = str(entry["question_id"])
        if qid in seen:
            raise EvaluationError(f"duplicate question_id {qid!r} in dataset")
        seen.add(qid)
        items.append(
            DatasetItem(
                question_id=qid,
                db_id=entry["db_id"],
                question=entry["question"],
                evidence=entry.get("evidence") or None,
                gold_sql=entry.get("SQL") or entry.get("gold_sql") or None,
            )
        )
    return items


# --- value and row comparison -----------------------------------------------

def _values_eq(a: object, b: object) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, bool) or isinstance(b, bool):
        return a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return math.isclose(a, b, rel_tol=REL_TOLERANCE, abs_tol=0.0)
    return a == b


def _rows_eq(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(_values_eq(x, y) for x, y in zip(a, b))


def _rows_ordered_eq(a: list[tuple], b: list[tuple]) -> bool:
    return len(a) == len(b) and all(_rows_eq(x, y) for x, y in zip(a, b))


def _rows_multiset_eq(a: list[tuple], b: list[tuple]) -> bool:
    if len(a) != len(b):
        return False
    used = [False] * len(b)
    for row in a:
        for i, other in enumerate(b):
            if not used[i] and _rows_eq(row, other):
                used[i] = True
                break
        else:
            return False
    return True


def compare_strict(pred: ExecutionResult, gold: ExecutionResult, *, ordered: bool = False) -> bool:
    """Exact-content match with column order significant; row order ignored unless ``ordered``."""
    if pred.error is not None or gold.error is not None:
        return False
    if len(pred.columns) != len(gold.columns):
        return False
    if ordered:
        return _rows_ordered_eq(pred.rows, gold.rows)
    return _rows_multiset_eq(pred.rows, gold.rows)


def _project(rows: list[tuple], mapping: list[int]) -> list[tuple]:
    return [tuple(row[i] for i in mapping) for row in rows]


def _column_values(rows: list[tuple], index: int) -> list:
    return [row[index] for row in rows]


def _exactly_hashable(values: list) -> bool:
    return all(v is None or isinstance(v, (int, str)) for v in values)


def compare_lenient(pred: ExecutionResult, gold: ExecutionResult, *, ordered: bool = False) -> bool:
    """True when some injective gold-column -> pred-column mapping reproduces the gold rows."""
    if pred.error is not None or gold.error is not None:
        return False
    n_gold = len(gold.columns)
    n_pred = len(pred.columns)
    if n_gold > n_pred:
        return False
    if len(pred.rows) != len(gold.rows):
        return False

    # Column-level prefilter: only sound for exactly comparable values, the
    # backtracking leaf check stays decisive either way.
    candidates: list[list[int]] = []
    for j in range(n_gold):
        gold_col = _column_values(gold.rows, j)
        options = []
        for i in range(n_pred):
            pred_col = _column_values(pred.rows, i)
            if _exactly_hashable(gold_col) and _exactly_hashable(pred_col):
                if sorted(map(_sort_key, gold_col)) != sorted(map(_sort_key, pred_col)):
                    continue
            options.append(i)
        if not options:
            return False
        candidates.append(options)

    rows_match: Callable[[list[tuple], list[tuple]], bool] = (
        _rows_ordered_eq if ordered else _rows_multiset_eq
    )

    def backtrack(j: int, chosen: list[int], used: set[int]) -> bool:
        if j == n_gold:
            return rows_match(_project(pred.rows, chosen), gold.rows)
        for i in candidates[j]:
            if i in used:
                continue
            chosen.append(i)
            used.add(i)
            if backtrack(j + 1, chosen, used):
                return True
            chosen.pop()
            used.remove(i)
        return False

    return backtrack(0, [], set())


def _sort_key(value: object) -> tuple:
    return (value is None, type(value).__name__, str(value))


# --- run-level evaluation -----------------------------------------------------

@dataclass
class ItemOutcome:
    question_id: str
    matched: bool
    mode: str
    path_type: str | None = None
    termination: str | None = None
    flag: str | None = None  # NO_GOLD | GOLD_ERROR | INFRA_ERROR when excluded


@dataclass
class EvalReport:
    mode: str
    items: list[ItemOutcome] = field(default_factory=list)
    selection: dict | None = None

    @property
    def evaluable(self) -> list[ItemOutcome]:
        return [i for i in self.items if i.flag is None]

    @property
    def matched_count(self) -> int:
        return sum(1 for i in self.evaluable if i.matched)

    @property
    def ex_percent(self) -> float:
        evaluable = self.evaluable
        if not evaluable:
            return 0.0
        return 100.0 * self.matched_count / len(evaluable)

    def per_path(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for name in ("STRAIGHTFORWARD", "REFINEMENT", "EXPLORATORY"):
            rows = [i for i in self.evaluable if i.path_type == name]
            matched = sum(1 for i in rows if i.matched)
            out[name] = {
                "count": len(rows),
                "matched": matched,
                "ex_percent": 100.0 * matched / len(rows) if rows else 0.0,
            }
        return out

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ex_percent": round(self.ex_percent, 2),
            "evaluable": len(self.evaluable),
            "matched": self.matched_count,
            "per_path": self.per_path(),
            "selection": self.selection,
            "items": [
                {
                    "question_id": i.question_id,
                    "matched": i.matched,
                    "mode": i.mode,
                    "path_type": i.path_type,
                    "termination": i.termination,
                    "flag": i.flag,
                }
                for i in self.items
            ],
        }

    def format_text(self) -> str:
        lines = [
            f"mode: {self.mode}",
            f"EX: {self.ex_percent:.2f}%  ({self.matched_count}/{len(self.evaluable)} matched)",
            "",
            "path type        count  matched  EX%",
        ]
        for name, row in self.per_path().items():
            lines.append(
                f"{name:<16} {row['count']:>5} {row['matched']:>8}  {row['ex_percent']:.2f}"
            )
        if self.selection:
            lines += [
                "",
                "selection:",
                f"  precision: {self.selection['precision']:.4f}",
                f"  recall: {self.selection['recall']:.4f}",
                f"  avg LLM calls: {self.selection['avg_llm_calls']:.2f}",
                f"  avg tokens: {self.selection['avg_tokens']:.1f}",
            ]
        return "\n".join(lines)


def resolve_db_path(db_root: str | Path, db_id: str) -> Path | None:
    root = Path(db_root)
    for candidate in (root / f"{db_id}.sqlite", root / db_id / f"{db_id}.sqlite"):
        if candidate.exists():
            return candidate
    return None


COMPARATORS = {"strict": compare_strict, "lenient": compare_lenient}


def evaluate_run(
    dataset: Iterable[DatasetItem],
    predictions: Mapping[str, str],
    db_root: str | Path,
    mode: str = "strict",
    *,
    path_info: Mapping[str, Mapping[str, str]] | None = None,
    limits: ExecLimits | None = None,
) -> EvalReport:
    """Execute gold and predicted SQL per item and compare under ``mode``.

    Items without gold SQL, with failing gold SQL, or with a missing database
    are flagged and excluded from the accuracy denominator.
    """
    if mode not in COMPARATORS:
        raise EvaluationError(f"unknown mode {mode!r}; expected strict or lenient")
    comparator = COMPARATORS[mode]
    path_info = path_info or {}
    backends: dict[str, ExecBackend | None] = {}
    report = EvalReport(mode=mode)

    for item in sorted(dataset, key=lambda i: i.question_id):
        info = path_info.get(item.question_id, {})
        outcome = ItemOutcome(
            question_id=item.question_id,
            matched=False,
            mode=mode,
            path_type=info.get("path_type"),
            termination=info.get("termination"),
        )
        report.items.append(outcome)

        if not item.gold_sql:
            outcome.flag = "NO_GOLD"
            continue
        if item.db_id not in backends:
            path = resolve_db_path(db_root, item.db_id)
            backends[item.db_id] = SqliteBackend(path, limits=limits) if path else None
        backend = backends[item.db_id]
        if backend is None:
            outcome.flag = "INFRA_ERROR"
            continue

        gold_result = backend.execute(item.gold_sql, limits)
        if gold_result.error is not None:
            outcome.flag = "GOLD_ERROR"
            continue

        pred_sql = predictions.get(item.question_id, "")
        if not pred_sql:
            continue  # evaluable, unmatched
        pred_result = backend.execute(pred_sql, limits)
        ordered = has_order_by(pred_sql) and has_order_by(item.gold_sql)
        outcome.matched = comparator(pred_result, gold_result, ordered=ordered)
    return report


def selection_report(
    selection_records: Iterable[Mapping],
    gold_tables: Mapping[str, set[str]],
) -> dict:
    """Macro-averaged selection precision/recall plus mean call and token counts."""
    precisions: list[float] = []
    recalls: list[float] = []
    calls: list[float] = []
    tokens: list[float] = []
    for record in selection_records:
        qid = record["question_id"]
        calls.append(record.get("llm_calls", 0))
        tokens.append(record.get("tokens_sent", 0))
        gold = gold_tables.get(qid)
        if not gold:
            continue
        predicted = {t.casefold() for t in record.get("tables", [])}
        p, r = selection_metrics(predicted, {t.casefold() for t in gold})
        precisions.append(p)
        recalls.append(r)

    def avg(values: list[float]) -> float:
        return sum(values) / len(values) if values else 0.0

    return {
        "precision": avg(precisions),
        "recall": avg(recalls),
        "avg_llm_calls": avg(calls),
        "avg_tokens": avg(tokens),
        "n_scored": len(precisions),
    }
