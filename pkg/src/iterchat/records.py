"""The two dialogue data formats and conversions between them.

A multi-turn dialogue carries per-turn cumulative gold states.  A record
("history preference" + most recent one-turn dialogue) is the one-turn view:
exploding a labeled dialogue yields one record per turn, and replaying the
records' gains folds back to the final gold state.

JSONL key layout is fixed; see save_records / save_dialogues.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DatasetError, GainError
from .schema import PreferenceSchema
from .state import PreferenceState, StateGain, apply_gain, diff_states, states_equal

RECORD_KEYS = (
    "record_id",
    "source_dialogue_id",
    "turn_index",
    "history_preference",
    "system_utterance",
    "user_utterance",
    "state_gain",
    "preference_extraction",
)


@dataclass(frozen=True)
class DialogueTurn:
    """One reader-view turn: the system line that preceded the user line.

    system_utterance is empty on turn 1 (the user opens the dialogue);
    gold_state is the cumulative preference state after this turn.
    """

    system_utterance: str
    user_utterance: str
    gold_state: PreferenceState | None = None

    def __post_init__(self):
        if not self.user_utterance:
            raise DatasetError("turn has empty user utterance")


@dataclass(frozen=True)
class MultiTurnDialogue:
    dialogue_id: str
    domain_name: str
    turns: tuple[DialogueTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise DatasetError(f"dialogue {self.dialogue_id!r} has no turns")
        labeled = [t.gold_state is not None for t in self.turns]
        if any(labeled) and not all(labeled):
            raise DatasetError(
                f"dialogue {self.dialogue_id!r} is partially labeled; label all turns or none"
            )

    def is_labeled(self) -> bool:
        return self.turns[0].gold_state is not None


@dataclass(frozen=True)
class IterChatRecord:
    """History preference + the most recent one-turn dialogue, plus labels."""

    record_id: str
    history_preference: PreferenceState
    system_utterance: str
    user_utterance: str
    source_dialogue_id: str | None = None
    turn_index: int | None = None
    state_gain: StateGain | None = None
    preference_extraction: PreferenceState | None = None

    def __post_init__(self):
        if not self.user_utterance:
            raise DatasetError(f"record {self.record_id!r} has empty user utterance")
        if self.turn_index is not None and self.turn_index < 1:
            raise DatasetError(f"record {self.record_id!r} turn_index must be 1-based")
        self.validate_labels("lenient")

    def is_labeled(self) -> bool:
        return self.state_gain is not None and self.preference_extraction is not None

    def validate_labels(self, mode: str = "lenient") -> None:
        """Check history + gain == extraction when both labels are present."""
        if not self.is_labeled():
            return
        derived = apply_gain(self.history_preference, self.state_gain, mode)
        if not states_equal(derived, self.preference_extraction):
            raise DatasetError(
                f"record {self.record_id!r}: applying state_gain to history yields"
                f" a state different from preference_extraction"
            )


def record_to_json_dict(record: IterChatRecord) -> dict:
    return {
        "record_id": record.record_id,
        "source_dialogue_id": record.source_dialogue_id,
        "turn_index": record.turn_index,
        "history_preference": record.history_preference.to_json_dict(),
        "system_utterance": record.system_utterance,
        "user_utterance": record.user_utterance,
        "state_gain": record.state_gain.to_json_list() if record.state_gain is not None else None,
        "preference_extraction": (
            record.preference_extraction.to_json_dict()
            if record.preference_extraction is not None
            else None
        ),
    }


def record_from_json_dict(raw: Mapping) -> IterChatRecord:
    missing = [k for k in ("record_id", "history_preference", "user_utterance") if k not in raw]
    if missing:
        raise DatasetError(f"record line missing keys: {', '.join(missing)}")
    gain_raw = raw.get("state_gain")
    extraction_raw = raw.get("preference_extraction")
    return IterChatRecord(
        record_id=str(raw["record_id"]),
        source_dialogue_id=(
            str(raw["source_dialogue_id"]) if raw.get("source_dialogue_id") is not None else None
        ),
        turn_index=int(raw["turn_index"]) if raw.get("turn_index") is not None else None,
        history_preference=PreferenceState.from_dict(raw["history_preference"] or {}),
        system_utterance=str(raw.get("system_utterance", "")),
        user_utterance=str(raw["user_utterance"]),
        state_gain=StateGain.from_json_list(gain_raw) if gain_raw is not None else None,
        preference_extraction=(
            PreferenceState.from_dict(extraction_raw) if extraction_raw is not None else None
        ),
    )


def dialogue_to_json_dict(dialogue: MultiTurnDialogue) -> dict:
    return {
        "dialogue_id": dialogue.dialogue_id,
        "domain_name": dialogue.domain_name,
        "turns": [
            {
                "system_utterance": t.system_utterance,
                "user_utterance": t.user_utterance,
                "gold_state": t.gold_state.to_json_dict() if t.gold_state is not None else None,
            }
            for t in dialogue.turns
        ],
    }


def dialogue_from_json_dict(raw: Mapping) -> MultiTurnDialogue:
    turns_raw = raw.get("turns")
    if not isinstance(turns_raw, list):
        raise DatasetError("dialogue line missing turns list")
    turns = []
    for t in turns_raw:
        gold = t.get("gold_state")
        turns.append(
            DialogueTurn(
                system_utterance=str(t.get("system_utterance", "")),
                user_utterance=str(t.get("user_utterance", "")),
                gold_state=PreferenceState.from_dict(gold) if gold is not None else None,
            )
        )
    return MultiTurnDialogue(
        dialogue_id=str(raw.get("dialogue_id", "")),
        domain_name=str(raw.get("domain_name", "")),
        turns=tuple(turns),
    )


def explode(dialogue: MultiTurnDialogue) -> list[IterChatRecord]:
    """One record per turn: history = previous gold state, gain = diff to this turn."""
    if not dialogue.is_labeled():
        raise DatasetError("cannot explode unlabeled dialogue")
    records = []
    history = PreferenceState.empty()
    for t, turn in enumerate(dialogue.turns, start=1):
        gold = turn.gold_state
        assert gold is not None
        records.append(
            IterChatRecord(
                record_id=f"{dialogue.dialogue_id}#t{t}",
                source_dialogue_id=dialogue.dialogue_id,
                turn_index=t,
                history_preference=history,
                system_utterance=turn.system_utterance,
                user_utterance=turn.user_utterance,
                state_gain=diff_states(history, gold),
                preference_extraction=gold,
            )
        )
        history = gold
    return records


def replay(records: Sequence[IterChatRecord]) -> PreferenceState:
    """Left-fold the records' gains from the empty state; validates the chain."""
    state = PreferenceState.empty()
    source_ids = {r.source_dialogue_id for r in records}
    if len(source_ids) > 1:
        raise DatasetError(f"records mix source dialogues: {sorted(str(s) for s in source_ids)}")
    for position, record in enumerate(records, start=1):
        if record.turn_index is not None and record.turn_index != position:
            raise DatasetError(f"gap at turn {position}")
        if record.state_gain is None:
            raise DatasetError(f"record {record.record_id!r} has no state_gain; cannot replay")
        if not states_equal(record.history_preference, state):
            raise DatasetError(
                f"history mismatch at turn {position}: record history does not equal"
                f" the replayed state"
            )
        try:
            state = apply_gain(state, record.state_gain, "strict")
        except GainError as exc:
            raise DatasetError(f"replay failed at turn {position}: {exc}") from exc
        if record.preference_extraction is not None and not states_equal(
            state, record.preference_extraction
        ):
            raise DatasetError(
                f"extraction mismatch at turn {position}: replayed state differs"
                f" from the record's preference_extraction"
            )
    return state


@dataclass
class IngestReport:
    """Tally of keys dropped while ingesting an external dataset."""

    dropped: dict[str, int] = field(default_factory=dict)
    unmapped: dict[str, int] = field(default_factory=dict)

    @property
    def warning_count(self) -> int:
        return sum(self.dropped.values()) + sum(self.unmapped.values())


_ABSENT_VALUES = {"", "not mentioned"}


def ingest_external(
    raw: str,
    mapping: Mapping[str, str],
    schema: PreferenceSchema | None = None,
) -> tuple[list[MultiTurnDialogue], IngestReport]:
    """Adapt a MultiWOZ-style corpus into labeled dialogues.

    Expected raw layout: ``{dialogue_id: {"log": [{"text", "metadata"}, ...]}}``
    where the log alternates user/system entries and system entries carry the
    cumulative belief state as ``{domain: {"semi": {slot: value}, "book": ...}}``.
    External keys are flattened to ``domain-slot`` (``domain-book-slot`` for
    booking fields).  The mapping sends each external key to an internal slot
    name or "drop"; keys missing from the mapping are dropped with a warning.
    """
    if schema is not None:
        bad = [
            f"{ext} -> {internal}"
            for ext, internal in mapping.items()
            if internal != "drop" and schema.slot(internal) is None
        ]
        if bad:
            raise DatasetError(f"mapping references unknown internal slots: {'; '.join(bad)}")
    try:
        corpus = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"unparseable external dataset: {exc}") from exc
    if not isinstance(corpus, Mapping):
        raise DatasetError("external dataset top level must be an object keyed by dialogue id")

    report = IngestReport()
    dialogues = []
    for dialogue_id, payload in corpus.items():
        log = payload.get("log") if isinstance(payload, Mapping) else None
        if not isinstance(log, list) or not log:
            raise DatasetError(f"dialogue {dialogue_id!r} has no log entries")
        if len(log) % 2 != 0:
            raise DatasetError(
                f"dialogue {dialogue_id!r} ends without a system annotation entry"
            )
        turns = []
        previous_system = ""
        for i in range(0, len(log), 2):
            user_text = str(log[i].get("text", ""))
            system_entry = log[i + 1]
            state = _belief_to_state(system_entry.get("metadata") or {}, mapping, report)
            turns.append(
                DialogueTurn(
                    system_utterance=previous_system,
                    user_utterance=user_text,
                    gold_state=state,
                )
            )
            previous_system = str(system_entry.get("text", ""))
        dialogues.append(
            MultiTurnDialogue(
                dialogue_id=str(dialogue_id),
                domain_name=_dominant_domain(log),
                turns=tuple(turns),
            )
        )
    return dialogues, report


def _belief_to_state(
    metadata: Mapping, mapping: Mapping[str, str], report: IngestReport
) -> PreferenceState:
    assignments: dict[str, list[str]] = {}
    for domain, parts in metadata.items():
        if not isinstance(parts, Mapping):
            continue
        flat: list[tuple[str, object]] = []
        for slot, value in (parts.get("semi") or {}).items():
            flat.append((f"{domain}-{slot}", value))
        for slot, value in (parts.get("book") or {}).items():
            if slot == "booked":
                continue
            flat.append((f"{domain}-book-{slot}", value))
        for external_key, value in flat:
            values = value if isinstance(value, list) else [value]
            values = [str(v) for v in values if str(v).strip().lower() not in _ABSENT_VALUES]
            if not values:
                continue
            internal = mapping.get(external_key)
            if internal is None:
                report.unmapped[external_key] = report.unmapped.get(external_key, 0) + 1
                continue
            if internal == "drop":
                report.dropped[external_key] = report.dropped.get(external_key, 0) + 1
                continue
            assignments.setdefault(internal, []).extend(values)
    return PreferenceState.from_dict(assignments)


def _dominant_domain(log: list) -> str:
    counts: dict[str, int] = {}
    for entry in log:
        metadata = entry.get("metadata") or {}
        for domain, parts in metadata.items():
            if not isinstance(parts, Mapping):
                continue
            semi = parts.get("semi") or {}
            active = any(str(v).strip().lower() not in _ABSENT_VALUES for v in semi.values())
            if active:
                counts[domain] = counts.get(domain, 0) + 1
    if not counts:
        return ""
    return max(counts, key=lambda d: (counts[d], d))


def write_jsonl_atomic(path: str | Path, rows: Iterable[Mapping]) -> None:
    """Write JSONL via temp file + rename; never leaves a truncated file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False))
                handle.write("\n")
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{line_no}: invalid JSON line: {exc}") from exc
    return rows


def save_records(path: str | Path, records: Iterable[IterChatRecord]) -> None:
    write_jsonl_atomic(path, (record_to_json_dict(r) for r in records))


def load_records(path: str | Path) -> list[IterChatRecord]:
    return [record_from_json_dict(row) for row in read_jsonl(path)]


def save_dialogues(path: str | Path, dialogues: Iterable[MultiTurnDialogue]) -> None:
    write_jsonl_atomic(path, (dialogue_to_json_dict(d) for d in dialogues))


def load_dialogues(path: str | Path) -> list[MultiTurnDialogue]:
    return [dialogue_from_json_dict(row) for row in read_jsonl(path)]
