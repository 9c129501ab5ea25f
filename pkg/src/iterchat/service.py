"""Annotation workflow service: task leasing, strict gain intake, export.

Persistence is an append-only JSONL journal of events (task_created, leased,
submitted) with an in-memory index rebuilt by replaying the journal at
startup, so a restarted service reconstructs identical task states and
stats.  All writes go through one lock; reads are cheap dict lookups.

Timing is server-side: a submission's started_at is the lease grant time and
submitted_at the accept time; a client-reported start is stored alongside
for reference only.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .errors import GainError, ServiceError
from .records import (
    IterChatRecord,
    record_from_json_dict,
    record_to_json_dict,
)
from .schema import PreferenceSchema, validate_assignment
from .state import PreferenceState, StateGain, apply_gain, canonical

DEFAULT_LEASE_SECONDS = 600.0


@dataclass
class Lease:
    annotator_id: str
    leased_at: float
    expires_at: float

    def to_json_dict(self) -> dict:
        return {
            "annotator_id": self.annotator_id,
            "leased_at": self.leased_at,
            "expires_at": self.expires_at,
        }


@dataclass
class TaskState:
    task_id: str
    dataset_id: str
    record: IterChatRecord
    prefilled: bool
    seq: int
    status: str = "open"  # open | leased | done
    lease: Lease | None = None

    def to_json_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "dataset_id": self.dataset_id,
            "status": self.status,
            "prefilled": self.prefilled,
            "lease": self.lease.to_json_dict() if self.lease else None,
            "record": record_to_json_dict(self.record),
        }


class AnnotationStore:
    """Journal-backed task queue with strict-mode submission validation."""

    def __init__(
        self,
        journal_path: str | Path,
        schema: PreferenceSchema,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        now_fn: Callable[[], float] = time.time,
    ):
        self.schema = schema
        self.lease_seconds = lease_seconds
        self.now_fn = now_fn
        self.journal_path = Path(journal_path)
        self._lock = threading.Lock()
        self.tasks: dict[str, TaskState] = {}
        self.submissions: list[dict] = []
        self._seq = 0
        self.journal_path.parent.mkdir(parents=True, exist_ok=True)
        if self.journal_path.exists():
            with open(self.journal_path, encoding="utf-8") as handle:
                for line in handle:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line))
        self._journal = open(self.journal_path, "a", encoding="utf-8")

    def close(self) -> None:
        self._journal.close()

    # -- journal ----------------------------------------------------------

    def _record_event(self, event: dict) -> None:
        """Apply and persist one event; caller holds the lock."""
        self._apply(event)
        self._journal.write(json.dumps(event, ensure_ascii=False))
        self._journal.write("\n")
        self._journal.flush()

    def _apply(self, event: dict) -> None:
        kind = event.get("event")
        if kind == "task_created":
            record = record_from_json_dict(event["record"])
            self._seq += 1
            self.tasks[event["task_id"]] = TaskState(
                task_id=event["task_id"],
                dataset_id=event["dataset_id"],
                record=record,
                prefilled=bool(event.get("prefilled", False)),
                seq=self._seq,
            )
        elif kind == "leased":
            task = self.tasks[event["task_id"]]
            task.status = "leased"
            task.lease = Lease(
                annotator_id=event["annotator_id"],
                leased_at=float(event["leased_at"]),
                expires_at=float(event["expires_at"]),
            )
        elif kind == "submitted":
            task = self.tasks[event["task_id"]]
            task.status = "done"
            self.submissions.append(dict(event))
        else:
            raise ServiceError(f"unknown journal event kind {kind!r}", status=500)

    # -- datasets ----------------------------------------------------------

    def create_dataset(
        self, records: Sequence[IterChatRecord], dataset_id: str | None = None
    ) -> tuple[str, list[str]]:
        if not records:
            raise ServiceError("dataset upload contains no records", status=400)
        dataset_id = dataset_id or uuid.uuid4().hex[:12]
        task_ids = []
        with self._lock:
            for record in records:
                task_id = uuid.uuid4().hex[:12]
                self._record_event(
                    {
                        "event": "task_created",
                        "task_id": task_id,
                        "dataset_id": dataset_id,
                        "prefilled": record.state_gain is not None,
                        "record": record_to_json_dict(record),
                    }
                )
                task_ids.append(task_id)
        return dataset_id, task_ids

    # -- leasing -----------------------------------------------------------

    def lease_next_task(self, annotator_id: str) -> TaskState | None:
        """Atomically grant the oldest open (or lease-expired) task."""
        if not annotator_id:
            raise ServiceError("annotator_id must be non-empty", status=400)
        with self._lock:
            now = self.now_fn()
            candidates = [
                t
                for t in self.tasks.values()
                if t.status == "open"
                or (t.status == "leased" and t.lease and t.lease.expires_at <= now)
            ]
            if not candidates:
                return None
            task = min(candidates, key=lambda t: t.seq)
            self._record_event(
                {
                    "event": "leased",
                    "task_id": task.task_id,
                    "annotator_id": annotator_id,
                    "leased_at": now,
                    "expires_at": now + self.lease_seconds,
                }
            )
            return task

    # -- submission --------------------------------------------------------

    def _validate_gain(
        self, history: PreferenceState, gain: StateGain
    ) -> tuple[PreferenceState | None, list[dict]]:
        """Strict-mode walk of the ops, collecting every violation."""
        violations: list[dict] = []
        work = {slot: list(history.values(slot)) for slot in history.slots()}

        def flag(code: str, message: str, op_index: int, slot: str, value: str | None = None):
            violations.append(
                {
                    "code": code,
                    "message": message,
                    "op_index": op_index,
                    "slot": slot,
                    "value": value,
                }
            )

        def find_key(slot: str) -> str | None:
            for existing in work:
                if canonical(existing) == canonical(slot):
                    return existing
            return None

        for index, op in enumerate(gain.ops):
            definition = self.schema.slot(op.slot)
            if definition is None:
                flag("unknown_slot", f"unknown slot {op.slot!r}", index, op.slot)
                continue
            key = find_key(op.slot)
            if op.kind in ("add", "set"):
                for v in op.values:
                    if not definition.allows_value(v):
                        flag(
                            "value_not_allowed",
                            f"value {v!r} not allowed for slot {op.slot!r}",
                            index,
                            op.slot,
                            v,
                        )
                if op.kind == "add":
                    current = work.setdefault(key or op.slot, [])
                    for v in op.values:
                        if canonical(v) not in {canonical(c) for c in current}:
                            current.append(v)
                else:
                    if key is not None and key != op.slot:
                        del work[key]
                    work[op.slot] = list(dict.fromkeys(op.values))
            elif op.kind == "remove":
                if key is None:
                    flag(
                        "absent_slot",
                        f"remove on absent slot {op.slot!r}",
                        index,
                        op.slot,
                    )
                    continue
                for v in op.values:
                    if canonical(v) in {canonical(c) for c in work[key]}:
                        work[key] = [c for c in work[key] if canonical(c) != canonical(v)]
                    else:
                        flag(
                            "remove_absent_value",
                            f"remove of absent value {v!r} on slot {op.slot!r}",
                            index,
                            op.slot,
                            v,
                        )
                if not work[key]:
                    del work[key]
            elif op.kind == "clear":
                if key is None:
                    flag(
                        "absent_slot",
                        f"clear on absent slot {op.slot!r}",
                        index,
                        op.slot,
                    )
                    continue
                del work[key]

        if violations:
            return None, violations

        derived = apply_gain(history, gain, "strict")
        for slot in derived.slots():
            report = validate_assignment(self.schema, slot, derived.values(slot))
            for reason in report.reasons:
                violations.append(
                    {"code": "schema", "message": reason, "op_index": None, "slot": slot,
                     "value": None}
                )
        if violations:
            return None, violations
        return derived, []

    def submit_annotation(
        self,
        task_id: str,
        annotator_id: str,
        gain: StateGain,
        client_started_at: float | None = None,
    ) -> dict:
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise ServiceError(f"unknown task {task_id!r}", status=404)
            if task.status == "done":
                raise ServiceError(f"task {task_id!r} already done", status=409)
            if (
                task.status != "leased"
                or task.lease is None
                or task.lease.annotator_id != annotator_id
            ):
                raise ServiceError(
                    f"task {task_id!r} is not leased by annotator {annotator_id!r}",
                    status=409,
                )
            try:
                derived, violations = self._validate_gain(
                    task.record.history_preference, gain
                )
            except GainError as exc:
                derived, violations = None, [
                    {"code": "gain", "message": str(exc), "op_index": None,
                     "slot": "", "value": None}
                ]
            if derived is None:
                return {
                    "accepted": False,
                    "derived_extraction": None,
                    "violations": violations,
                }
            prefill = task.record.state_gain
            edited = prefill is None or prefill.to_json_list() != gain.to_json_list()
            now = self.now_fn()
            self._record_event(
                {
                    "event": "submitted",
                    "task_id": task_id,
                    "annotator_id": annotator_id,
                    "state_gain": gain.to_json_list(),
                    "derived_extraction": derived.to_json_dict(),
                    "started_at": task.lease.leased_at,
                    "submitted_at": now,
                    "client_started_at": client_started_at,
                    "edited": edited,
                }
            )
            return {
                "accepted": True,
                "derived_extraction": derived.to_json_dict(),
                "violations": [],
            }

    # -- reporting ---------------------------------------------------------

    def compute_stats(self, annotator_id: str | None = None) -> dict:
        with self._lock:
            rows = [
                s
                for s in self.submissions
                if annotator_id is None or s["annotator_id"] == annotator_id
            ]
        per: dict[str, list[float]] = {}
        for s in rows:
            per.setdefault(s["annotator_id"], []).append(
                float(s["submitted_at"]) - float(s["started_at"])
            )

        def summary(durations: list[float]) -> dict:
            total = sum(durations)
            return {
                "completed": len(durations),
                "total_seconds": total,
                "mean_seconds": total / len(durations) if durations else 0.0,
            }

        per_annotator = [
            {"annotator_id": a, **summary(d)} for a, d in sorted(per.items())
        ]
        return {
            "per_annotator": per_annotator,
            "overall": summary([d for ds in per.values() for d in ds]),
        }

    def export_labels(self, dataset_id: str) -> list[IterChatRecord]:
        with self._lock:
            done = [
                t
                for t in sorted(self.tasks.values(), key=lambda t: t.seq)
                if t.dataset_id == dataset_id and t.status == "done"
            ]
            by_task = {s["task_id"]: s for s in self.submissions}
        out = []
        for task in done:
            submission = by_task[task.task_id]
            gain = StateGain.from_json_list(submission["state_gain"])
            base = task.record
            record = IterChatRecord(
                record_id=base.record_id,
                source_dialogue_id=base.source_dialogue_id,
                turn_index=base.turn_index,
                history_preference=base.history_preference,
                system_utterance=base.system_utterance,
                user_utterance=base.user_utterance,
                state_gain=gain,
                preference_extraction=PreferenceState.from_dict(
                    submission["derived_extraction"]
                ),
            )
            record.validate_labels("strict")
            out.append(record)
        return out


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(store: AnnotationStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="iterchat annotation service")

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status, content={"error": "service", "detail": str(exc)}
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(_request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422, content={"error": "validation", "detail": str(exc)}
        )

    @app.get("/api/schema")
    def get_schema():
        return store.schema.to_json_dict()

    @app.post("/api/datasets")
    async def upload_dataset(request: Request, dataset_id: str | None = None):
        body = (await request.body()).decode("utf-8")
        records = []
        for line_no, line in enumerate(body.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json_dict(json.loads(line)))
            except Exception as exc:
                raise ServiceError(f"line {line_no}: {exc}", status=400) from exc
        created_id, task_ids = store.create_dataset(records, dataset_id)
        return {"dataset_id": created_id, "task_count": len(task_ids)}

    @app.post("/api/tasks/lease")
    async def lease(payload: dict):
        annotator_id = str(payload.get("annotator_id", ""))
        task = store.lease_next_task(annotator_id)
        return {"task": task.to_json_dict() if task else None}

    @app.post("/api/tasks/{task_id}/submit")
    async def submit(task_id: str, payload: dict):
        annotator_id = str(payload.get("annotator_id", ""))
        try:
            gain = StateGain.from_json_list(payload.get("state_gain", []))
        except GainError as exc:
            raise ServiceError(f"malformed state_gain: {exc}", status=400) from exc
        raw_started = payload.get("client_started_at")
        client_started_at = float(raw_started) if raw_started is not None else None
        return store.submit_annotation(
            task_id, annotator_id, gain, client_started_at=client_started_at
        )

    @app.get("/api/stats")
    def stats(annotator_id: str | None = None):
        return store.compute_stats(annotator_id)

    @app.get("/api/export/{dataset_id}")
    def export(dataset_id: str):
        lines = [
            json.dumps(record_to_json_dict(r), ensure_ascii=False)
            for r in store.export_labels(dataset_id)
        ]
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""))

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
