"""Feedback-driven SQL generation: execute, observe, act, finalize.

Each step pairs a query with its execution result; an action chosen from
EXTEND / REVISE / EXPLORE / FINALIZE decides how the next query is produced.
The loop is guaranteed to halt: a hard iteration cap forces finalization, and
three unparsable action replies coerce a FINALIZE. A bounded correction loop
repairs the finalized query against execution errors. A single-pass
decomposition baseline shares the same trajectory shape for ablations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from .execution import ExecBackend, ExecLimits, ExecutionResult
from .llm import LlmClient, LlmError, request
from .sqltext import extract_sql, is_read_only_select
from . import prompts


class ActionType(str, Enum):
    EXTEND = "EXTEND"
    REVISE = "REVISE"
    EXPLORE = "EXPLORE"
    FINALIZE = "FINALIZE"


class Termination(str, Enum):
    FINALIZED = "FINALIZED"
    ITERATION_CAP = "ITERATION_CAP"
    ERROR = "ERROR"


class PathType(str, Enum):
    STRAIGHTFORWARD = "STRAIGHTFORWARD"
    REFINEMENT = "REFINEMENT"
    EXPLORATORY = "EXPLORATORY"


@dataclass
class Action:
    type: ActionType
    rationale: str | None = None


@dataclass
class GenerationContext:
    """Everything the generator is allowed to see for one question."""

    question: str
    schema_text: str
    knowledge: str = ""
    alignment: str = ""

    def __post_init__(self) -> None:
        if not self.schema_text.strip():
            raise ValueError("generation context needs a non-empty schema rendering")


@dataclass
class GenerationStep:
    index: int
    sql: str
    result: ExecutionResult
    action_in: ActionType | None = None
    is_probe: bool = False


@dataclass
class Trajectory:
    steps: list[GenerationStep] = field(default_factory=list)
    actions: list[ActionType] = field(default_factory=list)
    final_sql: str = ""
    termination: Termination = Termination.ERROR
    path_type: PathType = PathType.STRAIGHTFORWARD
    forced_finalize: bool = False
    correction_rounds: int = 0
    correction_ok: bool | None = None
    notes: list[str] = field(default_factory=list)


@dataclass
class EvolveConfig:
    max_iterations: int = 10
    correction_rounds: int = 5
    gen_retries: int = 3
    action_retries: int = 3
    prompt_rows: int = 20
    prompt_cols: int = 10
    temperature: float = 0.2


@dataclass
class CorrectionOutcome:
    sql: str
    ok: bool
    executions: int
    first_result: ExecutionResult
    last_result: ExecutionResult


def _history_text(steps: list[GenerationStep], config: EvolveConfig) -> str:
    if not steps:
        return "(none yet)"
    chunks = []
    for step in steps:
        label = f"Step {step.index}"
        if step.action_in is not None:
            label += f" (after {step.action_in.value})"
        body = step.result.to_tsv(max_rows=config.prompt_rows, max_cols=config.prompt_cols)
        chunks.append(f"{label}\nSQL: {step.sql}\nResult:\n{body}")
    return "\n\n".join(chunks)


def _context_blocks(ctx: GenerationContext) -> dict[str, str]:
    return {
        "question": ctx.question,
        "schema": ctx.schema_text,
        "knowledge_block": prompts.knowledge_block(ctx.knowledge),
        "alignment_block": prompts.alignment_block(ctx.alignment),
    }


def gen_initial_query(
    ctx: GenerationContext,
    llm: LlmClient,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
) -> str | None:
    """First query draft; None when no SQL could be extracted after the retries."""
    config = config or EvolveConfig()
    prompt_set = prompt_set or prompts.PromptSet()
    prompt = prompt_set.initial.format(**_context_blocks(ctx))
    req = request(prompt, temperature=config.temperature, tag="evolve.initial")
    for _ in range(config.gen_retries):
        try:
            reply = llm.complete(req)
        except LlmError:
            continue
        sql = extract_sql(reply)
        if sql:
            return sql
    return None


_ACTION_RE = re.compile(
    r"ACTION\s*:\s*(EXTEND|REVISE|EXPLORE|FINALIZE)", re.IGNORECASE
)


def parse_action(text: str) -> Action | None:
    match = _ACTION_RE.search(text)
    if match is None:
        return None
    rationale = text[match.end():].strip().splitlines()
    return Action(
        type=ActionType(match.group(1).upper()),
        rationale=rationale[0][:500] if rationale and rationale[0] else None,
    )


def select_action(
    ctx: GenerationContext,
    steps: list[GenerationStep],
    llm: LlmClient,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
) -> tuple[Action, bool]:
    """Pick the next action from the step history.

    Returns (action, forced): after three unparsable replies the action is a
    coerced FINALIZE so the loop always terminates.
    """
    if not steps:
        raise ValueError("select_action needs a non-empty history")
    config = config or EvolveConfig()
    prompt_set = prompt_set or prompts.PromptSet()
    prompt = prompt_set.select_action.format(
        history=_history_text(steps, config), **_context_blocks(ctx)
    )
    req = request(prompt, temperature=config.temperature, tag="evolve.select_action")
    for _ in range(config.action_retries):
        try:
            reply = llm.complete(req)
        except LlmError:
            continue
        action = parse_action(reply)
        if action is not None:
            return action, False
    return Action(type=ActionType.FINALIZE, rationale="coerced: unparsable action replies"), True


def gen_next_query(
    steps: list[GenerationStep],
    action: Action,
    llm: LlmClient,
    ctx: GenerationContext | None = None,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
) -> str | None:
    """Next query under EXTEND/REVISE/EXPLORE; EXPLORE must pass the read-only filter."""
    if action.type is ActionType.FINALIZE:
        raise ValueError("FINALIZE does not generate a next query")
    config = config or EvolveConfig()
    prompt_set = prompt_set or prompts.PromptSet()
    context_block = ""
    if ctx is not None:
        blocks = _context_blocks(ctx)
        context_block = (
            f"Question: {blocks['question']}\n\n"
            f"{blocks['knowledge_block']}{blocks['alignment_block']}"
            f"Schema:\n{blocks['schema']}\n\n"
        )
    prompt = prompt_set.next_query.format(
        context_block=context_block,
        history=_history_text(steps, config),
        action=action.type.value,
        instruction=prompts.NEXT_INSTRUCTIONS[action.type.value],
    )
    req = request(prompt, temperature=config.temperature, tag="evolve.next")
    for _ in range(config.gen_retries):
        try:
            reply = llm.complete(req)
        except LlmError:
            continue
        sql = extract_sql(reply)
        if not sql:
            continue
        if action.type is ActionType.EXPLORE and not is_read_only_select(sql):
            continue
        return sql
    return None


def gen_final_query(
    ctx: GenerationContext,
    steps: list[GenerationStep],
    llm: LlmClient,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
) -> str | None:
    config = config or EvolveConfig()
    prompt_set = prompt_set or prompts.PromptSet()
    prompt = prompt_set.final_query.format(
        history=_history_text(steps, config), **_context_blocks(ctx)
    )
    req = request(prompt, temperature=config.temperature, tag="evolve.final")
    for _ in range(config.gen_retries):
        try:
            reply = llm.complete(req)
        except LlmError:
            continue
        sql = extract_sql(reply)
        if sql:
            return sql
    return None


def _last_executable_sql(steps: list[GenerationStep]) -> str | None:
    for step in reversed(steps):
        if step.result.ok:
            return step.sql
    return None


def correct_query(
    sql: str,
    exec_backend: ExecBackend,
    llm: LlmClient,
    max_rounds: int = 5,
    *,
    limits: ExecLimits | None = None,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
) -> CorrectionOutcome:
    """Execute; on error ask for a repair and re-execute, at most ``max_rounds`` times.

    Total executions are bounded by 1 + max_rounds. The outcome always carries
    the last attempted SQL and whether it executed.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")
    config = config or EvolveConfig()
    prompt_set = prompt_set or prompts.PromptSet()

    result = exec_backend.execute(sql, limits)
    first = result
    executions = 1
    rounds = 0
    while result.error is not None and rounds < max_rounds:
        prompt = prompt_set.correction.format(sql=sql, error=result.error.message)
        try:
            reply = llm.complete(
                request(prompt, temperature=config.temperature, tag="evolve.correct")
            )
        except LlmError:
            break
        repaired = extract_sql(reply)
        if not repaired:
            break
        sql = repaired
        result = exec_backend.execute(sql, limits)
        executions += 1
        rounds += 1
    return CorrectionOutcome(
        sql=sql,
        ok=result.error is None,
        executions=executions,
        first_result=first,
        last_result=result,
    )


def evolve(
    ctx: GenerationContext,
    llm: LlmClient,
    exec_backend: ExecBackend,
    max_iterations: int = 10,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
    limits: ExecLimits | None = None,
) -> Trajectory:
    """Run the generation loop to a final query.

    Halts within ``max_iterations`` executed steps for every model behavior.
    The finalized query goes through the correction loop before it is
    reported as the trajectory's final SQL.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    config = config or EvolveConfig(max_iterations=max_iterations)
    prompt_set = prompt_set or prompts.PromptSet()
    trajectory = Trajectory()

    sql = gen_initial_query(ctx, llm, config, prompt_set)
    if sql is None:
        trajectory.notes.append("no extractable SQL from the initial generation")
        return _finish(trajectory, "", Termination.ERROR)

    action_in: ActionType | None = None
    while True:
        index = len(trajectory.steps) + 1
        try:
            result = exec_backend.execute(sql, limits)
        except Exception as exc:  # backend unusable, not a statement failure
            trajectory.notes.append(f"backend unavailable: {exc}")
            return _finish(trajectory, _last_executable_sql(trajectory.steps) or "", Termination.ERROR)
        trajectory.steps.append(
            GenerationStep(
                index=index,
                sql=sql,
                result=result,
                action_in=action_in,
                is_probe=action_in is ActionType.EXPLORE,
            )
        )

        if index >= max_iterations:
            final = gen_final_query(ctx, trajectory.steps, llm, config, prompt_set)
            if final is None:
                final = _last_executable_sql(trajectory.steps)
            if final is None:
                trajectory.notes.append("cap reached and no executable query to fall back on")
                return _finish(trajectory, "", Termination.ERROR)
            return _finalize(
                trajectory, final, Termination.ITERATION_CAP, ctx, llm, exec_backend, config, prompt_set, limits
            )

        action, forced = select_action(ctx, trajectory.steps, llm, config, prompt_set)
        trajectory.actions.append(action.type)
        if forced:
            trajectory.forced_finalize = True
            trajectory.notes.append("action coerced to FINALIZE after unparsable replies")

        if action.type is ActionType.FINALIZE:
            final = gen_final_query(ctx, trajectory.steps, llm, config, prompt_set)
            if final is None:
                final = _last_executable_sql(trajectory.steps)
            if final is None:
                trajectory.notes.append("finalization produced no SQL and no step is executable")
                return _finish(trajectory, "", Termination.ERROR)
            return _finalize(
                trajectory, final, Termination.FINALIZED, ctx, llm, exec_backend, config, prompt_set, limits
            )

        next_sql = gen_next_query(trajectory.steps, action, llm, ctx, config, prompt_set)
        if next_sql is None:
            trajectory.notes.append(f"no extractable SQL for action {action.type.value}")
            return _finish(
                trajectory, _last_executable_sql(trajectory.steps) or "", Termination.ERROR
            )
        sql = next_sql
        action_in = action.type


def _finalize(
    trajectory: Trajectory,
    final_sql: str,
    termination: Termination,
    ctx: GenerationContext,
    llm: LlmClient,
    exec_backend: ExecBackend,
    config: EvolveConfig,
    prompt_set: prompts.PromptSet,
    limits: ExecLimits | None,
) -> Trajectory:
    outcome = correct_query(
        final_sql, exec_backend, llm, config.correction_rounds,
        limits=limits, config=config, prompt_set=prompt_set,
    )
    trajectory.correction_rounds = outcome.executions - 1
    trajectory.correction_ok = outcome.ok
    return _finish(trajectory, outcome.sql, termination)


def _finish(trajectory: Trajectory, final_sql: str, termination: Termination) -> Trajectory:
    trajectory.final_sql = final_sql
    trajectory.termination = termination
    trajectory.path_type = classify_path(trajectory)
    return trajectory


def classify_path(trajectory: Trajectory) -> PathType:
    """EXPLORATORY if any EXPLORE action occurred, else REFINEMENT on REVISE, else STRAIGHTFORWARD."""
    if ActionType.EXPLORE in trajectory.actions:
        return PathType.EXPLORATORY
    if ActionType.REVISE in trajectory.actions:
        return PathType.REFINEMENT
    return PathType.STRAIGHTFORWARD


def divide_and_conquer(
    ctx: GenerationContext,
    llm: LlmClient,
    exec_backend: ExecBackend,
    config: EvolveConfig | None = None,
    prompt_set: prompts.PromptSet | None = None,
    limits: ExecLimits | None = None,
) -> Trajectory:
    """Single-pass decomposition baseline: one completion, one step, no feedback actions."""
    config = config or EvolveConfig()
    prompt_set = prompt_set or prompts.PromptSet()
    trajectory = Trajectory()
    prompt = prompt_set.decompose.format(**_context_blocks(ctx))
    req = request(prompt, temperature=config.temperature, tag="evolve.decompose")
    sql = None
    for _ in range(config.gen_retries):
        try:
            reply = llm.complete(req)
        except LlmError:
            continue
        sql = extract_sql(reply)
        if sql:
            break
    if not sql:
        trajectory.notes.append("no extractable SQL from the decomposition reply")
        return _finish(trajectory, "", Termination.ERROR)

    outcome = correct_query(
        sql, exec_backend, llm, config.correction_rounds,
        limits=limits, config=config, prompt_set=prompt_set,
    )
    trajectory.steps.append(
        GenerationStep(index=1, sql=sql, result=outcome.first_result)
    )
    trajectory.correction_rounds = outcome.executions - 1
    trajectory.correction_ok = outcome.ok
    return _finish(trajectory, outcome.sql, Termination.FINALIZED)


# --- persistence ------------------------------------------------------------

def trajectory_records(question_id: str, trajectory: Trajectory) -> list[dict]:
    """Step records plus one summary record, ready for JSONL persistence."""
    from .catalog import estimate_tokens

    records = []
    for step in trajectory.steps:
        error = step.result.error
        records.append(
            {
                "question_id": question_id,
                "t": step.index,
                "action_in": step.action_in.value if step.action_in else None,
                "sql": step.sql,
                "columns": step.result.columns,
                "rows_truncated": step.result.truncated,
                "error": {"kind": error.kind.value, "message": error.message} if error else None,
                "tokens": estimate_tokens(step.result.to_tsv(max_rows=20, max_cols=10)),
            }
        )
    records.append(
        {
            "question_id": question_id,
            "termination": trajectory.termination.value,
            "path_type": trajectory.path_type.value,
            "final_sql": trajectory.final_sql,
        }
    )
    return records
