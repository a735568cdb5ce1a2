"""Dual-state text-to-SQL engine.

One state manages what the model sees (schema refinement, adaptive table
selection, data-grounded alignment); the other manages how it reasons
(execution-feedback query evolution with a bounded correction loop).
Evaluation ships strict and lenient execution-accuracy comparators, and the
LLM client records, replays, or scripts transcripts so the whole pipeline
runs offline.
"""

__version__ = "0.1.0"

from .catalog import (
    ColumnInfo,
    ForeignKey,
    RenderFormat,
    SchemaCatalog,
    SchemaView,
    SeriesMeta,
    TableInfo,
    estimate_tokens,
    ingest_catalog,
    render,
)
from .evaluate import DatasetItem, EvalReport, compare_lenient, compare_strict, evaluate_run
from .evolve import (
    Action,
    ActionType,
    GenerationContext,
    PathType,
    Termination,
    Trajectory,
    classify_path,
    divide_and_conquer,
    evolve,
)
from .execution import ExecLimits, ExecutionResult, SqliteBackend
from .llm import CompletionRequest, LlmClient, ScriptedRule
from .refine import RefinedKnowledge, RefinedSchema, detect_table_series, refine_schema
from .select import SelectionConfig, SelectionTrace, select_schema, tables_from_sql

__all__ = [
    "Action",
    "ActionType",
    "ColumnInfo",
    "CompletionRequest",
    "DatasetItem",
    "EvalReport",
    "ExecLimits",
    "ExecutionResult",
    "ForeignKey",
    "GenerationContext",
    "LlmClient",
    "PathType",
    "RenderFormat",
    "RefinedKnowledge",
    "RefinedSchema",
    "SchemaCatalog",
    "SchemaView",
    "ScriptedRule",
    "SelectionConfig",
    "SelectionTrace",
    "SeriesMeta",
    "SqliteBackend",
    "TableInfo",
    "Termination",
    "Trajectory",
    "classify_path",
    "compare_lenient",
    "compare_strict",
    "detect_table_series",
    "divide_and_conquer",
    "estimate_tokens",
    "evaluate_run",
    "evolve",
    "ingest_catalog",
    "refine_schema",
    "render",
    "select_schema",
    "tables_from_sql",
]
