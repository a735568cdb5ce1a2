"""Lexical SQL text helpers: tokenizing, table-reference scanning, statement extraction.

Everything here is total over malformed input: model output is scanned, never
parsed against a grammar, so a broken statement still yields whatever table
references and statements are lexically recoverable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# Quoted tokens are kept single-line: genuine SQL identifiers never span
# lines, and confining strings to one line stops a stray apostrophe in
# surrounding prose (model output) from swallowing the statement.
_TOKEN_RE = re.compile(
    r"""
      (?P<line_comment>--[^\n]*)
    | (?P<block_comment>/\*.*?\*/)
    | (?P<string>'(?:[^'\n]|'')*')
    | (?P<qident>"(?:[^"\n]|"")*"|`[^`\n]*`|\[[^\]\n]*\])
    | (?P<word>[A-Za-z_][A-Za-z0-9_$]*)
    | (?P<number>\d+(?:\.\d+)?)
    | (?P<ws>\s+)
    | (?P<symbol>.)
    """,
    re.VERBOSE | re.DOTALL,
)

# Words that can follow a table reference without being its alias.
_REF_STOPPERS = frozenset(
    """
    on where group order having limit offset join left right inner outer full
    cross natural union except intersect select from as using set values with
    window and or not when then else end case
    """.split()
)

_WRITE_WORDS = frozenset(
    """
    insert update delete drop create alter replace attach detach pragma vacuum
    truncate merge grant revoke reindex
    """.split()
)


@dataclass(frozen=True)
class Token:
    kind: str  # "word" | "ident" | "string" | "number" | "symbol"
    value: str


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    for match in _TOKEN_RE.finditer(sql):
        kind = match.lastgroup
        text = match.group()
        if kind in ("line_comment", "block_comment", "ws"):
            continue
        if kind == "qident":
            if text.startswith('"'):
                text = text[1:-1].replace('""', '"')
            else:
                text = text[1:-1]
            tokens.append(Token("ident", text))
        elif kind == "word":
            tokens.append(Token("word", text))
        elif kind == "string":
            tokens.append(Token("string", text))
        elif kind == "number":
            tokens.append(Token("number", text))
        else:
            tokens.append(Token("symbol", text))
    return tokens


def _is_name(token: Token) -> bool:
    return token.kind == "ident" or (
        token.kind == "word" and token.value.lower() not in _REF_STOPPERS
    )


def _parse_dotted(tokens: list[Token], i: int) -> tuple[str | None, int]:
    if i >= len(tokens) or not _is_name(tokens[i]):
        return None, i
    parts = [tokens[i].value]
    i += 1
    while (
        i + 1 < len(tokens)
        and tokens[i].kind == "symbol"
        and tokens[i].value == "."
        and _is_name(tokens[i + 1])
    ):
        parts.append(tokens[i + 1].value)
        i += 2
    return ".".join(parts), i


def table_refs(sql: str) -> list[str]:
    """Raw dotted names found in FROM/JOIN positions, aliases excluded.

    Subquery parentheses are not skipped: scanning continues inside them, so
    tables referenced by derived tables are still reported. Names are returned
    in first-occurrence order, duplicates removed.
    """
    tokens = tokenize(sql)
    refs: list[str] = []
    seen: set[str] = set()
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if tok.kind == "word" and tok.value.lower() in ("from", "join"):
            i = _scan_ref_list(tokens, i + 1, tok.value.lower() == "from", refs, seen)
        else:
            i += 1
    return refs


def _scan_ref_list(
    tokens: list[Token], i: int, allow_commas: bool, refs: list[str], seen: set[str]
) -> int:
    while True:
        if i >= len(tokens):
            return i
        if tokens[i].kind == "symbol" and tokens[i].value == "(":
            # Derived table: let the main scan continue inside the parentheses.
            return i + 1
        name, j = _parse_dotted(tokens, i)
        if name is None:
            return i + 1 if j == i else j
        key = name.casefold()
        if key not in seen:
            seen.add(key)
            refs.append(name)
        i = j
        # Skip an alias: AS x, or a bare name that is not a clause keyword.
        if i < len(tokens) and tokens[i].kind == "word" and tokens[i].value.lower() == "as":
            i += 1
            if i < len(tokens) and _is_name(tokens[i]):
                i += 1
        elif i < len(tokens) and _is_name(tokens[i]):
            i += 1
        if allow_commas and i < len(tokens) and tokens[i].kind == "symbol" and tokens[i].value == ",":
            i += 1
            continue
        return i


def split_statements(sql: str) -> list[str]:
    """Split on top-level semicolons, dropping empty fragments."""
    tokens = _TOKEN_RE.finditer(sql)
    boundaries = [0]
    depth = 0
    for match in tokens:
        kind = match.lastgroup
        text = match.group()
        if kind != "symbol":
            continue
        if text == "(":
            depth += 1
        elif text == ")":
            depth = max(0, depth - 1)
        elif text == ";" and depth == 0:
            boundaries.append(match.start())
            boundaries.append(match.end())
    boundaries.append(len(sql))
    out = []
    for start, end in zip(boundaries[::2], boundaries[1::2]):
        piece = sql[start:end].strip()
        if piece:
            out.append(piece)
    return out


def _depth0_words(sql: str) -> list[str]:
    words = []
    depth = 0
    for token in tokenize(sql):
        if token.kind == "symbol":
            if token.value == "(":
                depth += 1
            elif token.value == ")":
                depth = max(0, depth - 1)
        elif token.kind == "word" and depth == 0:
            words.append(token.value.lower())
    return words


def is_read_only_select(sql: str) -> bool:
    """True for a single SELECT (or WITH ... SELECT) statement with no DML/DDL verbs."""
    if len(split_statements(sql)) != 1:
        return False
    words = _depth0_words(sql)
    if not words or words[0] not in ("select", "with", "values"):
        return False
    return not any(w in _WRITE_WORDS for w in words)


def has_order_by(sql: str) -> bool:
    """True when the statement has a top-level ORDER BY clause."""
    words = _depth0_words(sql)
    return any(a == "order" and b == "by" for a, b in zip(words, words[1:]))


_SQL_TAG_RE = re.compile(r"<sql>(.*?)</sql>", re.DOTALL | re.IGNORECASE)
_FENCE_RE = re.compile(r"```[ \t]*\w*[ \t]*\n(.*?)```", re.DOTALL)
_STATEMENT_LINE_RE = re.compile(r"^\s*(?:SELECT|WITH)\b", re.IGNORECASE)


def extract_sql(text: str) -> str | None:
    """Pull one SQL statement out of model output.

    Precedence: last <sql>...</sql> region, then the last fenced code block,
    then the last line that starts like a statement (taken through to the end
    of the text). Returns None when nothing statement-shaped is found.
    """
    tags = _SQL_TAG_RE.findall(text)
    if tags:
        candidate = tags[-1].strip()
        return candidate or None
    fences = _FENCE_RE.findall(text)
    if fences:
        candidate = fences[-1].strip()
        return candidate or None
    lines = text.splitlines()
    for idx in range(len(lines) - 1, -1, -1):
        if _STATEMENT_LINE_RE.match(lines[idx]):
            return "\n".join(lines[idx:]).strip().rstrip(";") or None
    return None


def extract_sql_statements(text: str) -> list[str]:
    """All SQL statements in model output, for replies carrying several probes."""
    regions = [m.strip() for m in _SQL_TAG_RE.findall(text)]
    regions += [m.strip() for m in _FENCE_RE.findall(text)]
    if not regions:
        regions = [
            line.strip() for line in text.splitlines() if _STATEMENT_LINE_RE.match(line)
        ]
    statements: list[str] = []
    for region in regions:
        statements.extend(split_statements(region))
    return [s for s in statements if s]
