"""Command-line entry point: stage commands and the full pipeline run."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .driver import (
    ConfigError,
    MissingArtifactError,
    RunConfig,
    cmd_align,
    cmd_evaluate,
    cmd_generate,
    cmd_refine,
    cmd_select,
    cmd_stats,
    config_from_file,
    run_pipeline,
)

_COMMANDS = ("refine", "select", "align", "generate", "evaluate", "stats", "run")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsr",
        description="Text-to-SQL pipeline: refine, select, align, generate, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", type=Path, help="TOML config file; flags win over it")
        cmd.add_argument("--dataset", type=Path)
        cmd.add_argument("--db-root", type=Path, dest="db_root")
        cmd.add_argument("--out", type=Path, dest="out_dir")
        cmd.add_argument("--mode", choices=("strict", "lenient"))
        cmd.add_argument("--replay", type=Path, dest="replay")
        cmd.add_argument("--record", type=Path, dest="record")
        cmd.add_argument("--scripted", type=Path, dest="scripted")
        cmd.add_argument("--base-url", dest="base_url")
        cmd.add_argument("--model")
        cmd.add_argument("--api-key", dest="api_key")
        cmd.add_argument("--k", type=int)
        cmd.add_argument("--theta-max", type=int, dest="theta_max")
        cmd.add_argument("--max-iters", type=int, dest="max_iterations")
        cmd.add_argument("--temperature", type=float)
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--workers", type=int)
        cmd.add_argument("--timeout", type=float, dest="exec_timeout")
        cmd.add_argument("--row-cap", type=int, dest="row_cap")
        cmd.add_argument("--no-skr", action="store_true", dest="no_refine", default=None)
        cmd.add_argument("--no-ass", action="store_true", dest="no_select", default=None)
        cmd.add_argument("--no-saa", action="store_true", dest="no_align", default=None)
        cmd.add_argument("--dc-baseline", action="store_true", dest="no_evolve", default=None)
    return parser


_DIRECT_FIELDS = (
    "dataset", "db_root", "out_dir", "mode", "base_url", "model", "api_key",
    "k", "theta_max", "max_iterations", "temperature", "seed", "workers",
    "exec_timeout", "row_cap", "no_refine", "no_select", "no_align", "no_evolve",
)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = config_from_file(args.config) if args.config else RunConfig()
    for name in _DIRECT_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if args.replay is not None:
        config.llm_mode = "replay"
        config.transcript = args.replay
    if args.record is not None:
        config.llm_mode = "record"
        config.transcript = args.record
    if args.scripted is not None:
        config.llm_mode = "scripted"
        config.scripted_rules = args.scripted
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        if args.command == "run":
            manifest = run_pipeline(config)
            ok = sum(1 for q in manifest.questions if q["status"] == "ok")
            print(f"run complete: {ok}/{len(manifest.questions)} questions ok -> {config.out_dir}")
        elif args.command == "refine":
            for path in cmd_refine(config):
                print(path)
        elif args.command == "select":
            print(cmd_select(config))
        elif args.command == "align":
            print(cmd_align(config))
        elif args.command == "generate":
            print(cmd_generate(config))
        elif args.command == "evaluate":
            report = cmd_evaluate(config)
            print(report.format_text())
        elif args.command == "stats":
            print(cmd_stats(config))
    except (ConfigError, MissingArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
