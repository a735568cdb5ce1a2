"""Local SQL execution: sqlite backend with read-only enforcement, timeouts, row caps.

Every statement runs in its own connection, so concurrent read-only
executions are safe. Failures are encoded in the result, never raised:
the feedback loop upstream consumes errors as signals.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

from .sqltext import _depth0_words


class ExecErrorKind(str, Enum):
    SYNTAX = "SYNTAX"
    RUNTIME = "RUNTIME"
    TIMEOUT = "TIMEOUT"


@dataclass
class ExecError:
    kind: ExecErrorKind
    message: str


@dataclass
class ExecLimits:
    timeout: float = 30.0
    row_cap: int = 1000

    def __post_init__(self) -> None:
        if self.timeout <= 0 or self.row_cap <= 0:
            raise ValueError("timeout and row_cap must be positive")


@dataclass
class ExecutionResult:
    """Outcome of running one statement: columns and rows, or a structured error."""

    columns: list[str] = field(default_factory=list)
    rows: list[tuple] = field(default_factory=list)
    truncated: bool = False
    elapsed: float = 0.0
    error: ExecError | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_tsv(self, max_rows: int | None = None, max_cols: int | None = None) -> str:
        """Tab-separated text with a header row; NULL spelled out; caps marked."""
        if self.error is not None:
            return f"ERROR {self.error.kind.value}: {self.error.message}"
        columns = self.columns
        col_note = ""
        if max_cols is not None and len(columns) > max_cols:
            col_note = f"\t... (+{len(columns) - max_cols} more columns)"
            columns = columns[:max_cols]
        rows = self.rows
        row_note = None
        if max_rows is not None and len(rows) > max_rows:
            row_note = f"... ({len(rows) - max_rows} more rows)"
            rows = rows[:max_rows]
        lines = ["\t".join(columns) + col_note]
        for row in rows:
            cells = row if max_cols is None else row[:max_cols]
            lines.append("\t".join(_render_cell(v) for v in cells))
        if self.truncated:
            lines.append("... (result truncated at the row cap)")
        elif row_note:
            lines.append(row_note)
        return "\n".join(lines)


def _render_cell(value: object) -> str:
    if value is None:
        return "NULL"
    text = str(value)
    return text.replace("\t", " ").replace("\n", " ")


class ExecBackend(Protocol):
    """The pluggable boundary a warehouse-dialect client would implement."""

    def execute(self, sql: str, limits: ExecLimits | None = None) -> ExecutionResult: ...

    def content_hash(self) -> str: ...


class BackendError(RuntimeError):
    """The backend itself is unusable (bad locator, unreadable file)."""


# Authorizer action codes sufficient for SELECT statements.
_ALLOWED_ACTIONS = {
    getattr(sqlite3, "SQLITE_SELECT", 21),
    getattr(sqlite3, "SQLITE_READ", 20),
    getattr(sqlite3, "SQLITE_FUNCTION", 31),
    getattr(sqlite3, "SQLITE_RECURSIVE", 33),
}

_PROGRESS_GRANULARITY = 500


class SqliteBackend:
    """Embedded single-file backend; the only shipped ExecBackend implementation."""

    def __init__(
        self,
        path: str | Path,
        *,
        limits: ExecLimits | None = None,
        allow_writes: bool = False,
    ) -> None:
        self.path = Path(path)
        self.limits = limits or ExecLimits()
        self.allow_writes = allow_writes
        if not self.path.exists():
            raise BackendError(f"database not found: {self.path}")

    def _connect(self) -> sqlite3.Connection:
        if self.allow_writes:
            return sqlite3.connect(self.path, isolation_level=None)
        return sqlite3.connect(f"file:{self.path}?mode=ro", uri=True)

    def execute(self, sql: str, limits: ExecLimits | None = None) -> ExecutionResult:
        limits = limits or self.limits
        start = time.monotonic()

        if not self.allow_writes:
            words = _depth0_words(sql)
            if not words or words[0] not in ("select", "with", "values", "explain"):
                return ExecutionResult(
                    elapsed=time.monotonic() - start,
                    error=ExecError(
                        ExecErrorKind.SYNTAX,
                        "read-only backend: only SELECT statements are permitted",
                    ),
                )

        try:
            conn = self._connect()
        except sqlite3.Error as exc:
            return ExecutionResult(
                elapsed=time.monotonic() - start,
                error=ExecError(ExecErrorKind.RUNTIME, f"cannot open database: {exc}"),
            )

        deadline = start + limits.timeout
        timed_out = False

        def _progress() -> int:
            nonlocal timed_out
            if time.monotonic() > deadline:
                timed_out = True
                return 1
            return 0

        try:
            conn.set_progress_handler(_progress, _PROGRESS_GRANULARITY)
            if not self.allow_writes:
                conn.set_authorizer(self._authorize)
            cur = conn.execute(sql)
            columns = [d[0] for d in cur.description] if cur.description else []
            raw = cur.fetchmany(limits.row_cap + 1)
            truncated = len(raw) > limits.row_cap
            rows = [tuple(_convert_value(v) for v in row) for row in raw[: limits.row_cap]]
            return ExecutionResult(
                columns=columns,
                rows=rows,
                truncated=truncated,
                elapsed=time.monotonic() - start,
            )
        except sqlite3.Error as exc:
            kind = self._classify(exc, timed_out)
            return ExecutionResult(
                elapsed=time.monotonic() - start,
                error=ExecError(kind, str(exc)),
            )
        finally:
            conn.close()

    @staticmethod
    def _authorize(action: int, *args: object) -> int:
        if action in _ALLOWED_ACTIONS:
            return sqlite3.SQLITE_OK
        return sqlite3.SQLITE_DENY

    @staticmethod
    def _classify(exc: sqlite3.Error, timed_out: bool) -> ExecErrorKind:
        message = str(exc).lower()
        if timed_out and "interrupt" in message:
            return ExecErrorKind.TIMEOUT
        if isinstance(exc, sqlite3.ProgrammingError):
            return ExecErrorKind.SYNTAX
        if "syntax error" in message or "not authorized" in message or "readonly" in message:
            return ExecErrorKind.SYNTAX
        return ExecErrorKind.RUNTIME

    def content_hash(self) -> str:
        """Deterministic digest over all table contents; stable across restarts."""
        try:
            conn = sqlite3.connect(f"file:{self.path}?mode=ro", uri=True)
        except sqlite3.Error as exc:
            raise BackendError(f"cannot open database {self.path}: {exc}") from exc
        digest = hashlib.sha256()
        try:
            names = [
                row[0]
                for row in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type='table' "
                    "AND name NOT LIKE 'sqlite_%' ORDER BY name"
                )
            ]
            for name in names:
                digest.update(name.encode("utf-8"))
                digest.update(b"\x00")
                quoted = '"' + name.replace('"', '""') + '"'
                serialized = sorted(
                    json.dumps(list(row), default=str, ensure_ascii=False)
                    for row in conn.execute(f"SELECT * FROM {quoted}")
                )
                for line in serialized:
                    digest.update(line.encode("utf-8"))
                    digest.update(b"\x01")
        finally:
            conn.close()
        return digest.hexdigest()


def _convert_value(value: object) -> object:
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    return value
