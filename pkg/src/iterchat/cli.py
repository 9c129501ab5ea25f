"""Single command-line entry point wiring the toolkit's workflows.

Subcommands: schema draft|validate, generate, convert explode|replay|ingest,
extract, eval, serve.  Primary output goes to stdout, diagnostics to stderr;
file outputs are written atomically.  Exit codes: 0 success, 1 operation
error (with a JSON error summary on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import records as rio
from .backends import BackendConfig, make_http_backend, template_complete
from .errors import GenerationAborted, IterChatError
from .extraction import (
    extract_dialogue_iterative,
    extract_dialogue_multiturn,
    extract_turn,
    load_demos,
)
from .metrics import Prediction, evaluate_corpus
from .sampling import SamplerConfig, generate_dataset
from .schema import draft_schema, parse_schema, serialize_schema
from .state import PreferenceState

log = logging.getLogger("iterchat")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["template", "http"], default="template")
    parser.add_argument("--api-base", help="chat-completions base URL (overrides env)")
    parser.add_argument("--model", help="model id (overrides env)")
    parser.add_argument("--backend-config", help="JSON file with backend config fields")


def _build_backend(args):
    if args.backend == "template":
        return template_complete
    overrides: dict = {}
    if args.backend_config:
        overrides.update(json.loads(Path(args.backend_config).read_text(encoding="utf-8")))
    if args.api_base:
        overrides["endpoint_url"] = args.api_base
    if args.model:
        overrides["model_id"] = args.model
    return make_http_backend(BackendConfig.from_env(**overrides))


def _load_schema(path: str):
    return parse_schema(Path(path).read_text(encoding="utf-8"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iterchat")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p_schema = sub.add_parser("schema", help="draft or validate a preference schema")
    schema_sub = p_schema.add_subparsers(dest="schema_command", required=True)
    p_draft = schema_sub.add_parser("draft")
    p_draft.add_argument("--description", required=True, help="free-text domain description")
    p_draft.add_argument("--max-slots", type=int, default=8)
    p_draft.add_argument("--out", required=True)
    _add_backend_flags(p_draft)
    p_validate = schema_sub.add_parser("validate")
    p_validate.add_argument("--schema", required=True)

    p_generate = sub.add_parser("generate", help="sample a labeled one-turn dataset")
    p_generate.add_argument("--schema", required=True)
    p_generate.add_argument("--config", required=True, help="sampler config JSON")
    p_generate.add_argument("--seed", type=int, help="override the config seed")
    p_generate.add_argument("--out", required=True)
    p_generate.add_argument("--jobs", type=int, default=1)
    _add_backend_flags(p_generate)

    p_convert = sub.add_parser("convert", help="convert between dialogue formats")
    convert_sub = p_convert.add_subparsers(dest="convert_command", required=True)
    p_explode = convert_sub.add_parser("explode")
    p_explode.add_argument("--in", dest="input", required=True)
    p_explode.add_argument("--out", required=True)
    p_replay = convert_sub.add_parser("replay")
    p_replay.add_argument("--in", dest="input", required=True)
    p_ingest = convert_sub.add_parser("ingest")
    p_ingest.add_argument("--in", dest="input", required=True)
    p_ingest.add_argument("--mapping", required=True, help="external-key mapping JSON")
    p_ingest.add_argument("--schema", help="validate mapping targets against this schema")
    p_ingest.add_argument("--out", required=True)

    p_extract = sub.add_parser("extract", help="run few-shot preference extraction")
    p_extract.add_argument("--mode", choices=["iterchat", "multi-turn"], default="iterchat")
    p_extract.add_argument(
        "--input-kind",
        choices=["records", "dialogues"],
        help="default: records for iterchat mode, dialogues for multi-turn",
    )
    p_extract.add_argument("--in", dest="input", required=True)
    p_extract.add_argument("--schema", required=True)
    p_extract.add_argument("--demos", help="labeled demo file (JSONL)")
    p_extract.add_argument("--demo-count", type=int, default=2)
    p_extract.add_argument("--out", required=True)
    _add_backend_flags(p_extract)

    p_eval = sub.add_parser("eval", help="score predictions against gold labels")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gold", required=True)
    p_eval.add_argument("--format", choices=["json", "table"], default="json")
    p_eval.add_argument("--out", help="also write the JSON report to this path")

    p_serve = sub.add_parser("serve", help="run the annotation service")
    p_serve.add_argument("--schema", required=True)
    p_serve.add_argument("--journal", required=True)
    p_serve.add_argument("--listen", default="127.0.0.1:8080")
    p_serve.add_argument("--lease-seconds", type=float, default=600.0)
    p_serve.add_argument("--static-dir", help="directory with the built annotation UI")

    return parser


def _cmd_schema(args) -> int:
    if args.schema_command == "draft":
        schema = draft_schema(args.description, _build_backend(args), args.max_slots)
        rio.write_text_atomic(args.out, serialize_schema(schema) + "\n")
        print(f"wrote {args.out} ({len(schema.slots)} slots)")
        return 0
    schema = _load_schema(args.schema)
    print(f"ok: {schema.domain_name or '(unnamed)'} v{schema.version}, {len(schema.slots)} slots")
    return 0


def _cmd_generate(args) -> int:
    schema = _load_schema(args.schema)
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        raw["seed"] = args.seed
    config = SamplerConfig.from_json_dict(raw)
    backend = _build_backend(args)
    try:
        records, stats = generate_dataset(schema, config, backend, jobs=args.jobs)
    except GenerationAborted as exc:
        partial_path = args.out + ".partial"
        rio.save_records(partial_path, exc.partial)
        log.error("generation aborted; partial output at %s", partial_path)
        raise GenerationAborted(f"{exc} (partial output: {partial_path})", exc.partial) from exc
    rio.save_records(args.out, records)
    print(json.dumps(stats.to_json_dict(), ensure_ascii=False))
    return 0


def _cmd_convert(args) -> int:
    if args.convert_command == "explode":
        from .records import explode

        dialogues = rio.load_dialogues(args.input)
        out_records = [r for d in dialogues for r in explode(d)]
        rio.save_records(args.out, out_records)
        print(f"wrote {len(out_records)} records to {args.out}")
        return 0
    if args.convert_command == "replay":
        from .records import replay

        records = rio.load_records(args.input)
        by_dialogue: dict[str, list] = {}
        for record in records:
            by_dialogue.setdefault(record.source_dialogue_id or "", []).append(record)
        result = {}
        for dialogue_id, group in by_dialogue.items():
            group.sort(key=lambda r: r.turn_index or 0)
            result[dialogue_id] = replay(group).to_json_dict()
        print(json.dumps(result, ensure_ascii=False))
        return 0
    from .records import ingest_external

    mapping = json.loads(Path(args.mapping).read_text(encoding="utf-8"))
    schema = _load_schema(args.schema) if args.schema else None
    dialogues, report = ingest_external(
        Path(args.input).read_text(encoding="utf-8"), mapping, schema
    )
    rio.save_dialogues(args.out, dialogues)
    log.warning(
        "ingested %d dialogues; %d dropped-key warnings", len(dialogues), report.warning_count
    )
    print(
        json.dumps(
            {
                "dialogues": len(dialogues),
                "warning_count": report.warning_count,
                "dropped": report.dropped,
                "unmapped": report.unmapped,
            },
            ensure_ascii=False,
        )
    )
    return 0


def _cmd_extract(args) -> int:
    schema = _load_schema(args.schema)
    backend = _build_backend(args)
    mode = "multi_turn" if args.mode == "multi-turn" else "iterchat"
    input_kind = args.input_kind or ("dialogues" if mode == "multi_turn" else "records")
    demos = load_demos(args.demos, mode, args.demo_count) if args.demos else []

    rows = []
    if mode == "iterchat" and input_kind == "records":
        for record in rio.load_records(args.input):
            result = extract_turn(record, schema, demos, backend)
            rows.append(
                {
                    "record_id": record.record_id,
                    "preference_extraction": result.preference_extraction.to_json_dict(),
                    "state_gain": result.state_gain.to_json_list(),
                    "parse_status": result.parse_status,
                }
            )
    elif mode == "iterchat" and input_kind == "dialogues":
        for dialogue in rio.load_dialogues(args.input):
            states = extract_dialogue_iterative(dialogue, schema, demos, backend)
            for t, state in enumerate(states, start=1):
                rows.append(
                    {
                        "record_id": f"{dialogue.dialogue_id}#t{t}",
                        "preference_extraction": state.to_json_dict(),
                        "state_gain": None,
                        "parse_status": "ok",
                    }
                )
    elif mode == "multi_turn" and input_kind == "dialogues":
        for dialogue in rio.load_dialogues(args.input):
            state, status = extract_dialogue_multiturn(dialogue, schema, demos, backend)
            rows.append(
                {
                    "record_id": dialogue.dialogue_id,
                    "preference_extraction": state.to_json_dict(),
                    "state_gain": None,
                    "parse_status": status,
                }
            )
    else:
        raise IterChatError(f"mode {args.mode!r} does not accept input kind {input_kind!r}")
    rio.write_jsonl_atomic(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    preds = []
    for row in rio.read_jsonl(args.pred):
        if "record_id" not in row or "preference_extraction" not in row:
            raise IterChatError(
                "prediction lines need record_id and preference_extraction keys"
            )
        preds.append(
            Prediction(
                record_id=str(row["record_id"]),
                state=PreferenceState.from_dict(row["preference_extraction"] or {}),
                parse_status=str(row.get("parse_status", "ok")),
            )
        )
    golds = []
    for row in rio.read_jsonl(args.gold):
        if "record_id" not in row or row.get("preference_extraction") is None:
            raise IterChatError("gold lines need record_id and a non-null preference_extraction")
        golds.append(
            (str(row["record_id"]), PreferenceState.from_dict(row["preference_extraction"]))
        )
    report = evaluate_corpus(preds, golds)
    if args.format == "json":
        print(json.dumps(report.to_json_dict(), ensure_ascii=False))
    else:
        print(report.to_table())
    if args.out:
        rio.write_text_atomic(args.out, json.dumps(report.to_json_dict(), ensure_ascii=False) + "\n")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import AnnotationStore, create_app

    host, _, port = args.listen.rpartition(":")
    schema = _load_schema(args.schema)
    store = AnnotationStore(args.journal, schema, lease_seconds=args.lease_seconds)
    app = create_app(store, static_dir=args.static_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


_COMMANDS = {
    "schema": _cmd_schema,
    "generate": _cmd_generate,
    "convert": _cmd_convert,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=args.log_level.upper())
    try:
        return _COMMANDS[args.command](args)
    except (IterChatError, OSError, json.JSONDecodeError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "detail": str(exc)}, ensure_ascii=False),
            file=sys.stderr,
        )
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
