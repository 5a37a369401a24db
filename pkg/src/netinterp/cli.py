"""Command line entry point.

    netinterp [--config FILE] interpret [--input PATH|-] [--no-llm] [--json|--text]
    netinterp [--config FILE] kb ingest CSV --direction down|up --unit-locations FILE [--column-map FILE]
    netinterp [--config FILE] kb stats [--location KEY]
    netinterp [--config FILE] serve --bind HOST:PORT

Exit codes: 0 success, 1 fatal input error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from netinterp.config import PipelineConfig, load_config
from netinterp.errors import ConfigError, IngestError
from netinterp.kb import (
    ColumnMap,
    HeaderMismatch,
    KnowledgeBaseError,
    SQLiteStore,
    ingest_csv,
    load_unit_locations,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2

_DIRECTIONS = {"down": "download", "up": "upload"}


def _open_store(cfg: PipelineConfig) -> SQLiteStore:
    if not cfg.kb.path:
        raise ConfigError("kb.path must be set to use the knowledge base from the command line")
    return SQLiteStore(cfg.kb.path)


def cmd_interpret(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from netinterp.pipeline import Pipeline

    if args.input in (None, "-"):
        raw = sys.stdin.buffer.read()
    else:
        try:
            raw = Path(args.input).read_bytes()
        except OSError as exc:
            print(f"error: cannot read input: {exc.strerror}", file=sys.stderr)
            return EXIT_INPUT
    pipeline = Pipeline(cfg)
    try:
        summary = pipeline.interpret(raw, use_llm=not args.no_llm)
    except IngestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        pipeline.close()
    print(summary.to_text() if args.text else summary.to_json())
    return EXIT_OK


def cmd_kb_ingest(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    column_map = ColumnMap()
    if args.column_map:
        try:
            column_map = ColumnMap.from_dict(yaml.safe_load(Path(args.column_map).read_text("utf-8")) or {})
        except (OSError, yaml.YAMLError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid column map: {exc}") from exc
    try:
        units = load_unit_locations(args.unit_locations)
    except FileNotFoundError:
        print(f"error: unit location file not found: {args.unit_locations}", file=sys.stderr)
        return EXIT_INPUT
    except HeaderMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    store = _open_store(cfg)
    try:
        result = ingest_csv(
            store,
            args.csv,
            _DIRECTIONS[args.direction],
            units,
            column_map,
            utc_offset_source=args.offset_source,
        )
    except FileNotFoundError:
        print(f"error: file not found: {args.csv}", file=sys.stderr)
        return EXIT_INPUT
    except KnowledgeBaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        store.close()
    print(
        json.dumps(
            {"ingested": result.ingested, "skipped": result.skipped, "skip_reasons": result.skip_reasons},
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_kb_stats(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    store = _open_store(cfg)
    try:
        if args.location:
            out = {"location": args.location, "records": store.record_count(args.location)}
        else:
            out = {
                "records": store.record_count(),
                "locations": {key: store.record_count(key) for key in store.location_keys()},
            }
    finally:
        store.close()
    print(json.dumps(out, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    from netinterp.service import BindFailure, serve

    try:
        serve(cfg, args.bind)
    except BindFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netinterp", description="Explain speed-test results in plain language."
    )
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("interpret", help="interpret one result document")
    p.add_argument("--input", default="-", help="result JSON file, or - for stdin")
    p.add_argument("--no-llm", action="store_true", help="skip the model and use the rules-based summary")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", default=True, help="JSON output (default)")
    fmt.add_argument("--text", action="store_true", help="plain text output")
    p.set_defaults(func=cmd_interpret)

    kb = sub.add_parser("kb", help="knowledge base maintenance")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    pi = kb_sub.add_parser("ingest", help="ingest an MBA-layout CSV")
    pi.add_argument("csv")
    pi.add_argument("--direction", choices=sorted(_DIRECTIONS), required=True)
    pi.add_argument("--column-map", help="YAML/JSON column map (defaults to the MBA httpget layout)")
    pi.add_argument("--unit-locations", required=True, help="CSV: unit_id,city,region,country[,utc_offset_minutes]")
    pi.add_argument("--offset-source", choices=("map", "utc"), default="map")
    pi.set_defaults(func=cmd_kb_ingest)
    ps = kb_sub.add_parser("stats", help="record counts")
    ps.add_argument("--location", help="normalized location key (city|region|country)")
    ps.set_defaults(func=cmd_kb_stats)

    pv = sub.add_parser("serve", help="run the HTTP service")
    pv.add_argument("--bind", default="127.0.0.1:8080")
    pv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
