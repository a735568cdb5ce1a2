"""Default prompt templates for every stage; all overridable through run config."""

from __future__ import annotations

from dataclasses import dataclass, fields


def _block(label: str, text: str | None) -> str:
    if not text:
        return ""
    return f"{label}:\n{text}\n\n"


SELECTION = """You are selecting the database tables needed to answer a question.

Question: {question}

{knowledge_block}Database schema:
{schema}

Draft one SQL query that would answer the question, using only tables that \
appear in the schema above. Reply with the SQL in a fenced code block.
"""

PARTITIONED = """Question: {question}

{knowledge_block}One table from a much larger database:
{schema}

If this table helps answer the question, draft a SQL query that uses it. \
If it is not relevant, reply with the single word IRRELEVANT.
"""

PROBES = """You are preparing to write SQL for the question below. Inspect the data first.

Question: {question}

Schema:
{schema}

Propose up to {max_probes} short read-only SELECT statements (row counts, \
DISTINCT value listings, small joins) that reveal stored value formats, \
ranges, and join keys. Put each statement in its own fenced code block.
"""

SUMMARIZE = """Question: {question}

Probe queries and their execution results:
{probe_results}

Write a short plain-text note capturing what these results reveal about \
stored value formats, enumerations, units, synonyms, and join patterns. \
The note will be handed to the SQL writer as-is.
"""

INITIAL = """Write a single SQL query for the question below. It will be executed and \
you will see the result, so start with something you can verify.

Question: {question}

{knowledge_block}{alignment_block}Schema:
{schema}

Reply with one SQL statement in a fenced code block.
"""

SELECT_ACTION = """You are steering an iterative SQL-writing session.

Question: {question}

{knowledge_block}{alignment_block}Schema:
{schema}

Steps so far:
{history}

Choose the next action:
- EXTEND: the last result looks valid and informative; build on it toward the full answer.
- REVISE: the last result exposes a semantic or logical problem; correct the current query.
- EXPLORE: the last result was empty or surprising; run a short read-only probe before continuing.
- FINALIZE: the results line up with the question; produce the final query.

Reply with a line of the form `ACTION: <EXTEND|REVISE|EXPLORE|FINALIZE>` \
followed by a brief reason.
"""

NEXT_QUERY = """{context_block}Steps so far:
{history}

Chosen action: {action}. {instruction}
Reply with one SQL statement in a fenced code block.
"""

NEXT_INSTRUCTIONS = {
    "EXTEND": "Write the next, more complete query, building on what already worked.",
    "REVISE": "Write a corrected version of the current query.",
    "EXPLORE": "Write one short read-only SELECT probe; do not modify any data.",
}

FINAL_QUERY = """Question: {question}

{knowledge_block}{alignment_block}Schema:
{schema}

Steps so far:
{history}

Write the final, complete SQL query that answers the question. \
Reply with one SQL statement in a fenced code block.
"""

CORRECTION = """The SQL statement below failed to execute.

SQL:
{sql}

Error: {error}

Fix the statement. Reply with one SQL statement in a fenced code block.
"""

DECOMPOSE = """Answer the question by decomposing it.

Question: {question}

{knowledge_block}{alignment_block}Schema:
{schema}

Break the question into sub-questions, give pseudo-SQL for each, then \
assemble one final SQL query. End your reply with the final query wrapped \
in <sql> and </sql> tags.
"""

SERIES_DESCRIPTION = """A database contains a family of tables that share one structure and \
differ only by a name suffix.

Name pattern: {pattern}
Suffix range: {lo} to {hi}
Member count: {count}
Columns: {columns}
Layout differences between members: {deltas}

Write a concise description of this table family covering the naming \
convention, the suffix range, and any column differences between members.
"""

KNOWLEDGE_SUMMARY = """Condense the reference notes below, keeping only facts useful for \
writing SQL{question_clause}: units, enumerations, value formats, date \
ranges, and definitions of domain terms.

Notes:
{knowledge}
"""


@dataclass
class PromptSet:
    selection: str = SELECTION
    partitioned: str = PARTITIONED
    probes: str = PROBES
    summarize: str = SUMMARIZE
    initial: str = INITIAL
    select_action: str = SELECT_ACTION
    next_query: str = NEXT_QUERY
    final_query: str = FINAL_QUERY
    correction: str = CORRECTION
    decompose: str = DECOMPOSE
    series_description: str = SERIES_DESCRIPTION
    knowledge_summary: str = KNOWLEDGE_SUMMARY

    @classmethod
    def from_overrides(cls, overrides: dict[str, str] | None) -> "PromptSet":
        prompt_set = cls()
        for name, text in (overrides or {}).items():
            if name not in {f.name for f in fields(cls)}:
                raise ValueError(f"unknown prompt name {name!r}")
            setattr(prompt_set, name, text)
        return prompt_set


def knowledge_block(text: str | None) -> str:
    return _block("Reference notes", text)


def alignment_block(text: str | None) -> str:
    return _block("What probing the database revealed", text)
