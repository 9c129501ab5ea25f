#!/usr/bin/env python3
"""Boot the annotation service preloaded with a small synthetic dataset.

Generates unlabeled one-turn records, creates a dataset in a fresh journal,
and serves the HTTP API (plus the web UI when frontend/dist exists).
"""

import argparse
import sys
from pathlib import Path

import uvicorn

from iterchat.backends import template_complete
from iterchat.records import IterChatRecord
from iterchat.sampling import MOVE_KINDS, SamplerConfig, generate_dataset
from iterchat.schema import draft_schema
from iterchat.service import AnnotationStore, create_app


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--listen", default="127.0.0.1:8080")
    parser.add_argument("--tasks", type=int, default=20)
    parser.add_argument("--journal", default="demo_out/annotation_journal.jsonl")
    parser.add_argument("--static-dir", default="frontend/dist")
    args = parser.parse_args()

    schema = draft_schema("e-commerce product search", template_complete, max_slots=5)
    config = SamplerConfig(
        seed=11,
        record_count=args.tasks,
        history_slot_count=(0, 2),
        history_turn_count=(1, 6),
        ops_per_record=(1, 2),
        gain_mix={k: 1.0 for k in MOVE_KINDS},
    )
    labeled, _ = generate_dataset(schema, config, template_complete)
    unlabeled = [
        IterChatRecord(
            record_id=r.record_id,
            source_dialogue_id=r.source_dialogue_id,
            turn_index=r.turn_index,
            history_preference=r.history_preference,
            system_utterance=r.system_utterance,
            user_utterance=r.user_utterance.split("\n@@DIRECTIVE")[0],
        )
        for r in labeled
    ]

    journal = Path(args.journal)
    journal.parent.mkdir(parents=True, exist_ok=True)
    store = AnnotationStore(journal, schema, lease_seconds=600)
    if not store.tasks:
        dataset_id, _ = store.create_dataset(unlabeled, dataset_id="demo")
        print(f"created dataset {dataset_id} with {args.tasks} tasks")
    else:
        print(f"resuming journal with {len(store.tasks)} tasks")

    static_dir = args.static_dir if Path(args.static_dir).is_dir() else None
    if static_dir is None:
        print("frontend/dist not found; serving API only (build the UI with: cd frontend && npm run build)")
    app = create_app(store, static_dir=static_dir)
    host, _, port = args.listen.rpartition(":")
    print(f"listening on http://{args.listen}  (export: /api/export/demo)")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main())
