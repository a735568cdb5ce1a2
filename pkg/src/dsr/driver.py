"""Run orchestration: wire the stages into a pipeline, persist artifacts, report.

Per question the full pipeline is: refine (cached per database) -> select ->
align -> evolve -> correct. Ablation flags swap a stage for its pass-through:
no_refine keeps the raw schema, no_select keeps the whole refined schema,
no_align supplies an empty alignment prior, and no_evolve swaps the feedback
loop for the single-pass decomposition baseline. Stage commands read and
write the same artifact files, so stages can be re-run independently.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import prompts
from .align import ProbeCache, generate_probes, probe_record, run_probes, summarize_alignment
from .catalog import (
    SchemaCatalog,
    catalog_to_dict,
    estimate_tokens,
    ingest_catalog,
    render,
)
from .evaluate import (
    DatasetItem,
    EvalReport,
    evaluate_run,
    load_dataset,
    resolve_db_path,
    selection_report,
)
from .evolve import EvolveConfig, GenerationContext, divide_and_conquer, evolve, trajectory_records
from .execution import ExecLimits, SqliteBackend
from .llm import LlmClient, client_from_config
from .refine import (
    RefineConfig,
    RefinedKnowledge,
    RefinedSchema,
    refine_knowledge,
    refine_schema,
    refined_from_dict,
    refined_to_dict,
)
from .select import SelectionConfig, select_schema, tables_from_sql

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class MissingArtifactError(RuntimeError):
    """A downstream stage was invoked before its producer; names the producer."""

    def __init__(self, artifact: str, producer: str) -> None:
        super().__init__(
            f"missing artifact {artifact!r}: run `dsr {producer}` first"
        )
        self.producer = producer


@dataclass
class RunConfig:
    dataset: Path = Path("dataset.json")
    db_root: Path = Path(".")
    out_dir: Path = Path("out")
    # llm
    llm_mode: str = "scripted"
    base_url: str | None = None
    model: str | None = None
    api_key: str | None = None
    transcript: Path | None = None
    scripted_rules: Path | None = None
    # selection
    k: int = 3
    theta_max: int = 96_000
    selection_temperature: float = 1.2
    aggregation: str = "union"
    # generation
    max_iterations: int = 10
    correction_rounds: int = 5
    temperature: float = 0.2
    # alignment
    max_probes: int = 5
    summary_cap: int = 2000
    probe_row_cap: int = 20
    # refinement
    sample_rows: int = 100
    knowledge_budget: int = 4000
    # execution
    exec_timeout: float = 30.0
    row_cap: int = 1000
    # ablations (independent and composable)
    no_refine: bool = False
    no_select: bool = False
    no_align: bool = False
    no_evolve: bool = False
    # run
    seed: int = 0
    workers: int = 1
    mode: str = "strict"
    prompt_overrides: dict = field(default_factory=dict)

    def validate(self, need_llm: bool = True) -> None:
        if not Path(self.dataset).exists():
            raise ConfigError(f"dataset not found: {self.dataset}")
        if not Path(self.db_root).exists():
            raise ConfigError(f"db root not found: {self.db_root}")
        if need_llm:
            if self.llm_mode == "scripted" and not self.scripted_rules:
                raise ConfigError("scripted mode needs a rules file (--scripted)")
            if self.llm_mode == "replay" and not self.transcript:
                raise ConfigError("replay mode needs a transcript file (--replay)")
            if self.llm_mode == "record" and not self.transcript:
                raise ConfigError("record mode needs a transcript file (--record)")
            if self.llm_mode in ("live", "record") and not self.base_url:
                raise ConfigError(f"{self.llm_mode} mode needs a base URL")
        if self.k < 1 or self.theta_max <= 0 or self.max_iterations < 1:
            raise ConfigError("k, theta_max, and max_iterations must be positive")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value) if isinstance(value, Path) else value
        return out


_SECTION_FIELDS = {
    "run": ("dataset", "db_root", "out_dir", "seed", "workers", "mode"),
    "llm": ("llm_mode", "base_url", "model", "api_key", "transcript", "scripted_rules"),
    "selection": ("k", "theta_max", "selection_temperature", "aggregation"),
    "generation": ("max_iterations", "correction_rounds", "temperature"),
    "alignment": ("max_probes", "summary_cap", "probe_row_cap"),
    "refinement": ("sample_rows", "knowledge_budget"),
    "execution": ("exec_timeout", "row_cap"),
    "ablation": ("no_refine", "no_select", "no_align", "no_evolve"),
}

_PATH_FIELDS = {"dataset", "db_root", "out_dir", "transcript", "scripted_rules"}


def config_from_file(path: str | Path) -> RunConfig:
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    config = RunConfig()
    for section, names in _SECTION_FIELDS.items():
        table = data.get(section, {})
        for name in names:
            key = name
            if section == "llm" and name == "llm_mode":
                key = "mode"
            if key in table:
                _set_field(config, name, table[key])
    if "prompts" in data:
        config.prompt_overrides = dict(data["prompts"])
    return config


def _set_field(config: RunConfig, name: str, value: object) -> None:
    if name in _PATH_FIELDS and value is not None:
        value = Path(value)
    setattr(config, name, value)


# --- artifact layout ----------------------------------------------------------

def _paths(config: RunConfig) -> dict[str, Path]:
    out = Path(config.out_dir)
    return {
        "out": out,
        "refined": out / "refined",
        "selection": out / "selection.jsonl",
        "probes": out / "probes.jsonl",
        "alignment": out / "alignment",
        "trajectories": out / "trajectories",
        "predictions": out / "predictions.json",
        "manifest": out / "manifest.json",
        "report": out / "report.json",
    }


def _build_client(config: RunConfig) -> LlmClient:
    return client_from_config(
        config.llm_mode,
        base_url=config.base_url,
        model=config.model,
        api_key=config.api_key,
        transcript_path=config.transcript,
        rules_path=config.scripted_rules,
    )


def _prompt_set(config: RunConfig) -> prompts.PromptSet:
    overrides = {}
    for name, value in config.prompt_overrides.items():
        path = Path(value)
        overrides[name] = path.read_text() if path.exists() else value
    return prompts.PromptSet.from_overrides(overrides)


@dataclass
class _Services:
    config: RunConfig
    llm: LlmClient
    prompt_set: prompts.PromptSet
    limits: ExecLimits
    backends: dict[str, SqliteBackend] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def backend(self, db_id: str) -> SqliteBackend:
        with self._lock:
            if db_id not in self.backends:
                path = resolve_db_path(self.config.db_root, db_id)
                if path is None:
                    raise ConfigError(
                        f"no database found for db_id {db_id!r} under {self.config.db_root}"
                    )
                self.backends[db_id] = SqliteBackend(path, limits=self.limits)
            return self.backends[db_id]


def _services(config: RunConfig) -> _Services:
    return _Services(
        config=config,
        llm=_build_client(config),
        prompt_set=_prompt_set(config),
        limits=ExecLimits(timeout=config.exec_timeout, row_cap=config.row_cap),
    )


# --- refinement stage (cached per db_id) ---------------------------------------

def _catalog_hash(catalog: SchemaCatalog) -> str:
    blob = json.dumps(catalog_to_dict(catalog), sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _refined_for_db(
    services: _Services, db_id: str
) -> tuple[RefinedSchema, RefinedKnowledge]:
    config = services.config
    catalog = ingest_catalog(
        resolve_db_path(config.db_root, db_id),
        sample_rows=config.sample_rows,
        db_id=db_id,
        seed=config.seed,
    )
    if config.no_refine:
        refined = RefinedSchema(catalog=catalog)
        knowledge = RefinedKnowledge.of(catalog.knowledge or "", catalog.knowledge or "")
        return refined, knowledge

    catalog_hash = _catalog_hash(catalog)
    cache_path = _paths(config)["refined"] / f"{db_id}.json"
    if cache_path.exists():
        data = json.loads(cache_path.read_text())
        if data.get("catalog_hash") == catalog_hash:
            return refined_from_dict(data["refined"]), RefinedKnowledge(
                text=data["knowledge"]["text"],
                source_digest=data["knowledge"]["source_digest"],
            )

    refined, knowledge = refine_schema(
        catalog,
        services.backend(db_id),
        services.llm,
        RefineConfig(
            sample_rows=config.sample_rows, knowledge_budget=config.knowledge_budget
        ),
    )
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    cache_path.write_text(
        json.dumps(
            {
                "catalog_hash": catalog_hash,
                "refined": refined_to_dict(refined),
                "knowledge": {"text": knowledge.text, "source_digest": knowledge.source_digest},
            },
            indent=2,
            sort_keys=True,
        )
    )
    return refined, knowledge


# --- per-question pipeline ------------------------------------------------------

def _question_knowledge(
    services: _Services, refined_knowledge: RefinedKnowledge, item: DatasetItem
) -> str:
    parts = [p for p in (refined_knowledge.text, item.evidence) if p]
    combined = "\n".join(parts)
    if not combined:
        return ""
    budget = services.config.knowledge_budget
    if estimate_tokens(combined) <= budget:
        return combined
    return refine_knowledge(
        combined, item.question, services.llm, budget=budget,
        prompt_set=services.prompt_set,
    ).text


def _process_question(
    services: _Services,
    item: DatasetItem,
    refined: RefinedSchema,
    knowledge: RefinedKnowledge,
    probe_cache: ProbeCache,
) -> dict:
    config = services.config
    backend = services.backend(item.db_id)
    question_knowledge = _question_knowledge(services, knowledge, item)

    selection_config = SelectionConfig(
        k=config.k,
        theta_max=config.theta_max,
        temperature=config.selection_temperature,
        aggregation=config.aggregation,
    )
    if config.no_select:
        view = refined.catalog.view()
        selection_record = {
            "question_id": item.question_id,
            "branch": "NO_SELECT",
            "tables": refined.catalog.table_names(),
            "llm_calls": 0,
            "tokens_sent": 0,
        }
    else:
        view, trace = select_schema(
            item.question, refined, question_knowledge, services.llm,
            selection_config, services.prompt_set,
        )
        selection_record = trace.to_record(item.question_id)

    if config.no_align:
        alignment_text = ""
        probe_lines: list[dict] = []
    else:
        probes = generate_probes(
            item.question, view, services.llm, config.max_probes, services.prompt_set
        )
        probe_results = run_probes(
            probes, backend, config.probe_row_cap,
            timeout=min(config.exec_timeout, 10.0),
            cache=probe_cache, question_id=item.question_id,
        )
        summary = summarize_alignment(
            item.question, probe_results, services.llm,
            token_cap=config.summary_cap, prompt_set=services.prompt_set,
        )
        alignment_text = summary.text
        probe_lines = [
            probe_record(item.question_id, probe.sql, result)
            for probe, result in probe_results
        ]

    ctx = GenerationContext(
        question=item.question,
        schema_text=render(view),
        knowledge=question_knowledge,
        alignment=alignment_text,
    )
    evolve_config = EvolveConfig(
        max_iterations=config.max_iterations,
        correction_rounds=config.correction_rounds,
        temperature=config.temperature,
    )
    if config.no_evolve:
        trajectory = divide_and_conquer(
            ctx, services.llm, backend, evolve_config, services.prompt_set, services.limits
        )
    else:
        trajectory = evolve(
            ctx, services.llm, backend, config.max_iterations,
            evolve_config, services.prompt_set, services.limits,
        )

    return {
        "selection": selection_record,
        "probes": probe_lines,
        "alignment": alignment_text,
        "trajectory": trajectory,
        "final_sql": trajectory.final_sql,
    }


@dataclass
class RunManifest:
    config: dict
    questions: list[dict] = field(default_factory=list)
    llm: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "questions": self.questions,
            "llm": self.llm,
            "timings": self.timings,
        }


def run_pipeline(config: RunConfig) -> RunManifest:
    """Run every stage for every dataset question and persist all artifacts."""
    config.validate()
    started = time.monotonic()
    paths = _paths(config)
    for key in ("out", "refined", "alignment", "trajectories"):
        paths[key].mkdir(parents=True, exist_ok=True)

    services = _services(config)
    dataset = load_dataset(config.dataset)
    probe_cache = ProbeCache(paths["probes"])

    refined_by_db: dict[str, tuple[RefinedSchema, RefinedKnowledge]] = {}
    for item in dataset:
        if item.db_id not in refined_by_db:
            refined_by_db[item.db_id] = _refined_for_db(services, item.db_id)

    manifest = RunManifest(config=config.to_dict())
    selection_lines: list[dict] = []
    predictions: dict[str, str] = {}

    def _run_one(item: DatasetItem) -> tuple[DatasetItem, dict | None, str | None]:
        try:
            refined, knowledge = refined_by_db[item.db_id]
            return item, _process_question(services, item, refined, knowledge, probe_cache), None
        except Exception as exc:  # per-question failures never stop the run
            logger.exception("question %s failed", item.question_id)
            return item, None, f"{type(exc).__name__}: {exc}"

    workers = max(1, config.workers)
    if workers == 1:
        outcomes = [_run_one(item) for item in dataset]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, dataset))

    for item, result, error in outcomes:
        if result is None:
            manifest.questions.append(
                {"question_id": item.question_id, "db_id": item.db_id, "status": "error", "error": error}
            )
            continue
        trajectory = result["trajectory"]
        selection_lines.append(result["selection"])
        predictions[item.question_id] = result["final_sql"]
        (paths["alignment"] / f"{item.question_id}.txt").write_text(result["alignment"])
        records = trajectory_records(item.question_id, trajectory)
        with open(paths["trajectories"] / f"{item.question_id}.jsonl", "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")
        manifest.questions.append(
            {
                "question_id": item.question_id,
                "db_id": item.db_id,
                "status": "ok",
                "branch": result["selection"]["branch"],
                "tables": result["selection"]["tables"],
                "path_type": trajectory.path_type.value,
                "termination": trajectory.termination.value,
                "final_sql": trajectory.final_sql,
            }
        )

    with open(paths["selection"], "w", encoding="utf-8") as handle:
        for line in selection_lines:
            handle.write(json.dumps(line, ensure_ascii=False) + "\n")
    paths["predictions"].write_text(json.dumps(predictions, indent=2, sort_keys=True))

    manifest.llm = {
        "calls": services.llm.calls,
        "by_tag": dict(sorted(services.llm.calls_by_tag.items())),
    }
    manifest.timings = {"wall_seconds": round(time.monotonic() - started, 3)}
    paths["manifest"].write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest


# --- stage commands -------------------------------------------------------------

def cmd_refine(config: RunConfig) -> list[Path]:
    config.validate()
    paths = _paths(config)
    paths["refined"].mkdir(parents=True, exist_ok=True)
    services = _services(config)
    written = []
    for db_id in sorted({item.db_id for item in load_dataset(config.dataset)}):
        _refined_for_db(services, db_id)
        written.append(paths["refined"] / f"{db_id}.json")
    return written


def _load_refined(config: RunConfig, db_id: str) -> tuple[RefinedSchema, RefinedKnowledge]:
    path = _paths(config)["refined"] / f"{db_id}.json"
    if not path.exists():
        raise MissingArtifactError(str(path), "refine")
    data = json.loads(path.read_text())
    return refined_from_dict(data["refined"]), RefinedKnowledge(
        text=data["knowledge"]["text"], source_digest=data["knowledge"]["source_digest"]
    )


def cmd_select(config: RunConfig) -> Path:
    config.validate()
    paths = _paths(config)
    services = _services(config)
    lines = []
    for item in load_dataset(config.dataset):
        refined, knowledge = _load_refined(config, item.db_id)
        question_knowledge = _question_knowledge(services, knowledge, item)
        if config.no_select:
            lines.append(
                {
                    "question_id": item.question_id,
                    "branch": "NO_SELECT",
                    "tables": refined.catalog.table_names(),
                    "llm_calls": 0,
                    "tokens_sent": 0,
                }
            )
            continue
        _, trace = select_schema(
            item.question, refined, question_knowledge, services.llm,
            SelectionConfig(
                k=config.k, theta_max=config.theta_max,
                temperature=config.selection_temperature, aggregation=config.aggregation,
            ),
            services.prompt_set,
        )
        lines.append(trace.to_record(item.question_id))
    with open(paths["selection"], "w", encoding="utf-8") as handle:
        for line in lines:
            handle.write(json.dumps(line, ensure_ascii=False) + "\n")
    return paths["selection"]


def _load_selection(config: RunConfig) -> dict[str, dict]:
    path = _paths(config)["selection"]
    if not path.exists():
        raise MissingArtifactError(str(path), "select")
    records = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                record = json.loads(line)
                records[record["question_id"]] = record
    return records


def cmd_align(config: RunConfig) -> Path:
    config.validate()
    paths = _paths(config)
    paths["alignment"].mkdir(parents=True, exist_ok=True)
    services = _services(config)
    selection = _load_selection(config)
    probe_cache = ProbeCache(paths["probes"])
    for item in load_dataset(config.dataset):
        if config.no_align:
            (paths["alignment"] / f"{item.question_id}.txt").write_text("")
            continue
        refined, _ = _load_refined(config, item.db_id)
        record = selection.get(item.question_id)
        if record is None:
            raise MissingArtifactError(f"selection for {item.question_id}", "select")
        view = refined.catalog.view(tables=record["tables"])
        probes = generate_probes(
            item.question, view, services.llm, config.max_probes, services.prompt_set
        )
        results = run_probes(
            probes, services.backend(item.db_id), config.probe_row_cap,
            timeout=min(config.exec_timeout, 10.0),
            cache=probe_cache, question_id=item.question_id,
        )
        summary = summarize_alignment(
            item.question, results, services.llm,
            token_cap=config.summary_cap, prompt_set=services.prompt_set,
        )
        (paths["alignment"] / f"{item.question_id}.txt").write_text(summary.text)
    return paths["alignment"]


def cmd_generate(config: RunConfig) -> Path:
    config.validate()
    paths = _paths(config)
    paths["trajectories"].mkdir(parents=True, exist_ok=True)
    services = _services(config)
    selection = _load_selection(config)
    predictions: dict[str, str] = {}
    for item in load_dataset(config.dataset):
        refined, knowledge = _load_refined(config, item.db_id)
        record = selection.get(item.question_id)
        if record is None:
            raise MissingArtifactError(f"selection for {item.question_id}", "select")
        alignment_path = _paths(config)["alignment"] / f"{item.question_id}.txt"
        alignment_text = alignment_path.read_text() if alignment_path.exists() else ""
        ctx = GenerationContext(
            question=item.question,
            schema_text=render(refined.catalog.view(tables=record["tables"])),
            knowledge=_question_knowledge(services, knowledge, item),
            alignment=alignment_text,
        )
        evolve_config = EvolveConfig(
            max_iterations=config.max_iterations,
            correction_rounds=config.correction_rounds,
            temperature=config.temperature,
        )
        backend = services.backend(item.db_id)
        if config.no_evolve:
            trajectory = divide_and_conquer(
                ctx, services.llm, backend, evolve_config, services.prompt_set, services.limits
            )
        else:
            trajectory = evolve(
                ctx, services.llm, backend, config.max_iterations,
                evolve_config, services.prompt_set, services.limits,
            )
        predictions[item.question_id] = trajectory.final_sql
        with open(paths["trajectories"] / f"{item.question_id}.jsonl", "w", encoding="utf-8") as handle:
            for rec in trajectory_records(item.question_id, trajectory):
                handle.write(json.dumps(rec, ensure_ascii=False) + "\n")
    paths["predictions"].write_text(json.dumps(predictions, indent=2, sort_keys=True))
    return paths["predictions"]


def _load_path_info(config: RunConfig) -> dict[str, dict]:
    info: dict[str, dict] = {}
    trajectories = _paths(config)["trajectories"]
    if not trajectories.exists():
        return info
    for path in sorted(trajectories.glob("*.jsonl")):
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                record = json.loads(line)
                if "path_type" in record:
                    info[record["question_id"]] = {
                        "path_type": record["path_type"],
                        "termination": record["termination"],
                    }
    return info


def cmd_evaluate(config: RunConfig) -> EvalReport:
    config.validate(need_llm=False)
    paths = _paths(config)
    if not paths["predictions"].exists():
        raise MissingArtifactError(str(paths["predictions"]), "generate")
    predictions = json.loads(paths["predictions"].read_text())
    dataset = load_dataset(config.dataset)
    report = evaluate_run(
        dataset, predictions, config.db_root, config.mode,
        path_info=_load_path_info(config),
        limits=ExecLimits(timeout=config.exec_timeout, row_cap=config.row_cap),
    )
    report.selection = _selection_summary(config, dataset)
    paths["report"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return report


def _selection_summary(config: RunConfig, dataset: list[DatasetItem]) -> dict | None:
    paths = _paths(config)
    if not paths["selection"].exists():
        return None
    records = list(_load_selection(config).values())
    gold_tables: dict[str, set[str]] = {}
    for item in dataset:
        if not item.gold_sql:
            continue
        refined_path = paths["refined"] / f"{item.db_id}.json"
        if refined_path.exists():
            refined, _ = _load_refined(config, item.db_id)
            known = refined.catalog.table_names()
        else:
            db_path = resolve_db_path(config.db_root, item.db_id)
            if db_path is None:
                continue
            known = ingest_catalog(db_path, sample_rows=0, db_id=item.db_id).table_names()
        gold = tables_from_sql(item.gold_sql, known)
        if gold:
            gold_tables[item.question_id] = gold
    return selection_report(records, gold_tables)


def cmd_stats(config: RunConfig) -> str:
    """Selection report, EX summary, and the per-path table, as plain text."""
    config.validate(need_llm=False)
    paths = _paths(config)
    dataset = load_dataset(config.dataset)
    lines = []

    selection = _selection_summary(config, dataset)
    if selection is not None:
        lines += [
            "selection",
            f"  precision:     {selection['precision']:.4f}",
            f"  recall:        {selection['recall']:.4f}",
            f"  avg LLM calls: {selection['avg_llm_calls']:.2f}",
            f"  avg tokens:    {selection['avg_tokens']:.1f}",
            "",
        ]

    per_item_matched: dict[str, bool] = {}
    if paths["report"].exists():
        report = json.loads(paths["report"].read_text())
        lines += [
            f"EX ({report['mode']}): {report['ex_percent']:.2f}%  "
            f"({report['matched']}/{report['evaluable']} matched)",
            "",
        ]
        for entry in report["items"]:
            if entry["flag"] is None:
                per_item_matched[entry["question_id"]] = entry["matched"]

    path_info = _load_path_info(config)
    counts = {"STRAIGHTFORWARD": [0, 0], "REFINEMENT": [0, 0], "EXPLORATORY": [0, 0]}
    for qid, info in path_info.items():
        row = counts.get(info["path_type"])
        if row is None:
            continue
        row[0] += 1
        if per_item_matched.get(qid):
            row[1] += 1
    lines.append("path type        count  matched")
    for name, (count, matched) in counts.items():
        lines.append(f"{name:<16} {count:>5} {matched:>8}")
    return "\n".join(lines)
