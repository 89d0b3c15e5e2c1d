"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .backends import HttpChatBackend, HttpEmbedder, MockChatBackend, MockEmbedder
from .bench import manifold_report, run_bench, write_fixture
from .config import EngineConfig
from .engine import MemoryEngine
from .errors import (
    BackendFailure,
    CorruptRecord,
    NonMonotonicTimestamp,
    ProviderError,
    SchemaError,
    StoreIoError,
    TimemError,
    UnknownUser,
)
from .recall import Complexity
from .store import DATA_DIR_ENV, LogStore, parse_transcript
from .timeutil import format_ts, parse_ts

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3

_DATA_ERRORS = (SchemaError, NonMonotonicTimestamp, CorruptRecord, StoreIoError,
                UnknownUser)
_BACKEND_ERRORS = (BackendFailure, ProviderError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(EXIT_USAGE)


def _load_config(args) -> EngineConfig:
    if args.config:
        return EngineConfig.load(args.config)
    return EngineConfig()


def _build_engine(args, config: EngineConfig, need_store: bool = False) -> MemoryEngine:
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV)
    if need_store and not data_dir:
        raise SchemaError("a data directory is required (--data-dir or TIMEM_DATA_DIR)")
    store = LogStore(data_dir) if data_dir else None
    if args.backend == "http":
        chat = HttpChatBackend(
            config.chat_endpoint, config.chat_model, timeout=config.request_timeout,
            max_retries=config.max_retries, max_concurrency=config.max_concurrency)
        embedder = HttpEmbedder(
            config.embed_endpoint, config.embed_model, dimension=config.embedding_dim,
            timeout=config.request_timeout, max_retries=config.max_retries,
            max_concurrency=config.max_concurrency)
    else:
        chat = MockChatBackend()
        embedder = MockEmbedder(config.embedding_dim)
    return MemoryEngine(config=config, chat=chat, embedder=embedder, store=store)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data-dir", help="store root (default: $TIMEM_DATA_DIR)")
    parser.add_argument("--config", help="path to a config file")
    parser.add_argument("--backend", choices=["mock", "http"], default="mock")
    parser.add_argument("--output", choices=["json", "table"], default="table")
    parser.add_argument("--seed", type=int, default=42)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="timem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest transcript files into the store")
    _add_common(p)
    p.add_argument("transcripts", nargs="+")
    p.add_argument("--no-flush", action="store_true",
                   help="leave trailing groups open after ingesting")

    p = sub.add_parser("recall", help="answer a query with recalled memories")
    _add_common(p)
    p.add_argument("--user", required=True)
    p.add_argument("query")
    p.add_argument("--time", help="query timestamp (ISO-8601)")
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--complexity-override", choices=["simple", "hybrid", "complex"])

    p = sub.add_parser("validate", help="check structural rules of stored trees")
    _add_common(p)
    p.add_argument("--user", help="validate a single user")

    p = sub.add_parser("bench", help="replay transcripts and a questions file")
    _add_common(p)
    p.add_argument("--transcripts", nargs="+", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--no-gate", action="store_true")
    p.add_argument("--complexity-override", choices=["simple", "hybrid", "complex"])

    p = sub.add_parser("analyze", help="embedding-geometry report per level")
    _add_common(p)

    p = sub.add_parser("gen-fixture", help="write a seeded synthetic fixture")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=3)
    p.add_argument("--turns", type=int, default=120)
    p.add_argument("--questions", type=int, default=30)

    p = sub.add_parser("config-dump", help="print the effective configuration")
    _add_common(p)
    return parser


def _cmd_ingest(args) -> int:
    config = _load_config(args)
    engine = _build_engine(args, config, need_store=True)
    for path in args.transcripts:
        transcript = parse_transcript(path)
        created = 0
        for turn in transcript.turns:
            created += len(engine.ingest_turn(transcript.user_id, turn))
        if not args.no_flush:
            created += len(engine.flush(transcript.user_id))
        report = engine.validate(transcript.user_id)
        counts = {f"L{int(lvl)}": c for lvl, c in report.node_count_per_level.items()}
        print(f"{transcript.user_id}: {len(transcript.turns)} turns, "
              f"{created} nodes created, counts {counts}")
    return EXIT_OK


def _cmd_recall(args) -> int:
    config = _load_config(args)
    engine = _build_engine(args, config, need_store=True)
    engine.load_user(args.user)
    override = Complexity(args.complexity_override) if args.complexity_override else None
    result = engine.recall(
        args.user, args.query,
        t_q=parse_ts(args.time) if args.time else None,
        gate=not args.no_gate,
        complexity_override=override)
    if args.output == "json":
        payload = {
            "plan": {"complexity": result.plan.complexity.value,
                     "keywords": result.plan.keywords,
                     "fallback": result.plan.planner_fallback_used},
            "counts": result.counts,
            "context_token_count": result.context_token_count,
            "memories": [{
                "node_id": m.node_id, "level": m.level,
                "start": format_ts(m.interval.start), "end": format_ts(m.interval.end),
                "fused": m.fused, "text": m.text,
            } for m in result.memories],
        }
        print(json.dumps(payload, indent=2))
    else:
        print(f"complexity={result.plan.complexity.value} "
              f"keywords={result.plan.keywords} counts={result.counts} "
              f"tokens={result.context_token_count}")
        for m in result.memories:
            print(f"  [L{m.level} #{m.node_id} {format_ts(m.interval.end)}] {m.text}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = _load_config(args)
    engine = _build_engine(args, config, need_store=True)
    users = [args.user] if args.user else engine.load_all() or engine.store.users()
    if args.user:
        engine.load_user(args.user)
    bad = 0
    for user in users:
        report = engine.validate(user)
        counts = {f"L{int(lvl)}": c for lvl, c in report.node_count_per_level.items()}
        status = "ok" if report.ok else f"{len(report.violations)} violations"
        print(f"{user}: {status} {counts}")
        for v in report.violations:
            print(f"  node {v.node_id}: {v.rule}: {v.detail}")
        bad += len(report.violations)
    return EXIT_DATA if bad else EXIT_OK


def _cmd_bench(args) -> int:
    config = _load_config(args)
    engine = _build_engine(args, config)
    override = Complexity(args.complexity_override) if args.complexity_override else None
    report = run_bench(args.transcripts, args.questions, config=config,
                       engine=engine, gate=not args.no_gate,
                       complexity_override=override)
    print(report.to_jsonl() if args.output == "json" else report.table(), end="")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    config = _load_config(args)
    engine = _build_engine(args, config, need_store=True)
    engine.load_all()
    report = manifold_report(engine.tree)
    print(report.to_json() if args.output == "json" else report.table(), end="")
    return EXIT_OK


def _cmd_gen_fixture(args) -> int:
    paths = write_fixture(args.out, seed=args.seed, n_users=args.users,
                          total_turns=args.turns, n_questions=args.questions)
    for path in paths:
        print(path)
    return EXIT_OK


def _cmd_config_dump(args) -> int:
    print(_load_config(args).dump(), end="")
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "recall": _cmd_recall,
    "validate": _cmd_validate,
    "bench": _cmd_bench,
    "analyze": _cmd_analyze,
    "gen-fixture": _cmd_gen_fixture,
    "config-dump": _cmd_config_dump,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse --help exits 0, usage errors 1
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except _BACKEND_ERRORS as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, KeyError, ValueError, TimemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
