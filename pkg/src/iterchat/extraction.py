"""Few-shot preference extraction: prompts, output parsing, the iterative loop.

Two prompt modes share one demo mechanism:

* iterchat mode renders the history preference state plus the single most
  recent (system, user) exchange; the model answers with a state_gain and
  the updated preference_extraction.
* multi-turn mode renders every turn of a full dialogue; the model answers
  with the final preference_extraction only.

Prompt text lives in versioned template files under prompts/.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal, Sequence

from .backends import Backend, ChatMessage
from .errors import BackendError, DatasetError, ExtractionAborted, GainError
from .records import IterChatRecord, MultiTurnDialogue, load_dialogues, load_records
from .schema import PreferenceSchema, extract_json_block, validate_assignment
from .state import PreferenceState, StateGain, apply_gain, diff_states, states_equal
from .templates import load_prompt_template

PromptMode = Literal["iterchat", "multi_turn"]

DEFAULT_DEMO_COUNT = 2


@dataclass(frozen=True)
class DemoExample:
    """One in-context demonstration: rendered input and gold output."""

    input_text: str
    output_text: str

    def __post_init__(self):
        if not self.input_text or not self.output_text:
            raise DatasetError("demo example has empty input or output rendering")


@dataclass(frozen=True)
class ExtractionResult:
    state_gain: StateGain
    preference_extraction: PreferenceState
    raw_output: str
    parse_status: str  # ok | repaired | failed
    schema_violations: tuple[str, ...] = ()


def render_state(state: PreferenceState) -> str:
    return json.dumps(state.to_json_dict(), ensure_ascii=False)


def render_turn(system_utterance: str, user_utterance: str) -> str:
    lines = []
    if system_utterance:
        lines.append(f"system: {system_utterance}")
    lines.append(f"user: {user_utterance}")
    return "\n".join(lines)


def render_record_input(record: IterChatRecord) -> str:
    return (
        f"History Preference: {render_state(record.history_preference)}\n"
        f"{render_turn(record.system_utterance, record.user_utterance)}"
    )


def render_dialogue_input(dialogue: MultiTurnDialogue) -> str:
    lines = ["Dialogue:"]
    for turn in dialogue.turns:
        lines.append(render_turn(turn.system_utterance, turn.user_utterance))
    return "\n".join(lines)


def demo_from_record(record: IterChatRecord) -> DemoExample:
    if not record.is_labeled():
        raise DatasetError(f"demo record {record.record_id!r} is unlabeled")
    output = json.dumps(
        {
            "state_gain": record.state_gain.to_json_list(),
            "preference_extraction": record.preference_extraction.to_json_dict(),
        },
        ensure_ascii=False,
    )
    return DemoExample(render_record_input(record), output)


def demo_from_dialogue(dialogue: MultiTurnDialogue) -> DemoExample:
    if not dialogue.is_labeled():
        raise DatasetError(f"demo dialogue {dialogue.dialogue_id!r} is unlabeled")
    final = dialogue.turns[-1].gold_state
    output = json.dumps({"preference_extraction": final.to_json_dict()}, ensure_ascii=False)
    return DemoExample(render_dialogue_input(dialogue), output)


def load_demos(path, mode: PromptMode, count: int = DEFAULT_DEMO_COUNT) -> list[DemoExample]:
    """First ``count`` labeled entries of a demo file (static selection)."""
    if mode == "iterchat":
        return [demo_from_record(r) for r in load_records(path)[:count]]
    if mode == "multi_turn":
        return [demo_from_dialogue(d) for d in load_dialogues(path)[:count]]
    raise ValueError(f"unknown prompt mode {mode!r}")


def _slot_lines(schema: PreferenceSchema) -> str:
    lines = []
    for slot in schema.slots:
        arity = "multi-valued" if slot.multi_valued else "single-valued"
        if slot.schema_values:
            values = " | ".join(slot.schema_values)
            if slot.allow_free_values:
                values += " | (free values allowed)"
        else:
            values = "(free values)"
        description = f" -- {slot.description}" if slot.description else ""
        lines.append(f"- {slot.name} ({arity}; values: {values}){description}")
    return "\n".join(lines)


def build_prompt(
    mode: PromptMode,
    schema: PreferenceSchema,
    demos: Sequence[DemoExample],
    input_item: IterChatRecord | MultiTurnDialogue,
) -> list[ChatMessage]:
    """Render the system instruction, the demos, and the task input."""
    if mode == "iterchat":
        if not isinstance(input_item, IterChatRecord):
            raise ValueError("iterchat mode requires an IterChatRecord input")
        template = load_prompt_template("extract_iterchat.v1.txt")
        task_body = render_record_input(input_item)
    elif mode == "multi_turn":
        if not isinstance(input_item, MultiTurnDialogue):
            raise ValueError("multi_turn mode requires a MultiTurnDialogue input")
        template = load_prompt_template("extract_multiturn.v1.txt")
        task_body = render_dialogue_input(input_item)
    else:
        raise ValueError(f"unknown prompt mode {mode!r}")

    system_text = template.format(
        domain_name=schema.domain_name or "task-oriented",
        slot_lines=_slot_lines(schema),
    )
    sections = []
    for i, demo in enumerate(demos, start=1):
        sections.append(f"Example {i}:\n{demo.input_text}\nAnswer: {demo.output_text}")
    sections.append(f"Task:\n{task_body}\nAnswer:")
    return [
        ChatMessage("system", system_text),
        ChatMessage("user", "\n\n".join(sections)),
    ]


def _parse_gain_ops(raw_ops, notes: list[str]) -> StateGain:
    ops = []
    if not isinstance(raw_ops, list):
        notes.append("state_gain is not a list")
        return StateGain(())
    for entry in raw_ops:
        if not isinstance(entry, dict):
            notes.append(f"dropped non-object gain op: {entry!r}")
            continue
        kind = str(entry.get("op", "")).strip().lower()
        slot = str(entry.get("slot", ""))
        values = entry.get("values", [])
        if isinstance(values, (str, bytes)):
            values = [values]
        try:
            ops.append(
                StateGain.from_json_list([{"op": kind, "slot": slot, "values": values}]).ops[0]
            )
        except GainError as exc:
            notes.append(f"dropped invalid gain op: {exc}")
    return StateGain(tuple(ops))


def _parse_state_dict(raw_state, notes: list[str]) -> PreferenceState | None:
    if not isinstance(raw_state, dict):
        notes.append("preference_extraction is not an object")
        return None
    cleaned = {}
    for slot, values in raw_state.items():
        if isinstance(values, (str, bytes)):
            values = [values]
        if not isinstance(values, list):
            notes.append(f"dropped slot {slot!r}: values are not a list")
            continue
        cleaned[str(slot)] = [str(v) for v in values]
    try:
        return PreferenceState.from_dict(cleaned)
    except DatasetError as exc:
        notes.append(f"invalid state: {exc}")
        return None


def parse_extraction_output(
    raw: str, schema: PreferenceSchema, history: PreferenceState
) -> ExtractionResult:
    """Total parse of a model reply; failures become parse_status, never raises.

    The first balanced JSON object is read for ``state_gain`` and
    ``preference_extraction``.  A missing half is derived from the other
    against the history (status "repaired"); when both are present but
    disagree, the gain-derived state wins.  Schema-invalid values are kept
    but flagged.
    """
    failed = ExtractionResult(
        state_gain=StateGain(()),
        preference_extraction=history,
        raw_output=raw,
        parse_status="failed",
    )
    obj = extract_json_block(raw)
    if obj is None:
        return failed
    notes: list[str] = []
    gain = _parse_gain_ops(obj["state_gain"], notes) if "state_gain" in obj else None
    extraction = (
        _parse_state_dict(obj["preference_extraction"], notes)
        if "preference_extraction" in obj
        else None
    )

    status = "ok" if not notes else "repaired"
    if gain is None and extraction is None:
        return failed
    if gain is None:
        gain = diff_states(history, extraction)
        status = "repaired"
    else:
        derived = apply_gain(history, gain, "lenient")
        if extraction is None:
            extraction = derived
            status = "repaired"
        elif not states_equal(extraction, derived):
            extraction = derived
            status = "repaired"

    violations = list(notes)
    for slot in extraction.slots():
        report = validate_assignment(schema, slot, extraction.values(slot))
        violations.extend(report.reasons)
    return ExtractionResult(
        state_gain=gain,
        preference_extraction=extraction,
        raw_output=raw,
        parse_status=status,
        schema_violations=tuple(violations),
    )


def parse_state_output(raw: str, schema: PreferenceSchema) -> tuple[PreferenceState, str]:
    """Parse a multi-turn-mode reply: the final state only."""
    obj = extract_json_block(raw)
    if obj is None:
        return PreferenceState.empty(), "failed"
    notes: list[str] = []
    if "preference_extraction" in obj:
        state = _parse_state_dict(obj["preference_extraction"], notes)
        if state is not None:
            return state, ("ok" if not notes else "repaired")
        return PreferenceState.empty(), "failed"
    # Tolerate a bare state object.
    state = _parse_state_dict(obj, notes)
    if state is not None:
        return state, "repaired"
    return PreferenceState.empty(), "failed"


def extract_turn(
    record: IterChatRecord,
    schema: PreferenceSchema,
    demos: Sequence[DemoExample],
    backend: Backend,
) -> ExtractionResult:
    """One-turn extraction: prompt, call, parse."""
    messages = build_prompt("iterchat", schema, demos, record)
    try:
        raw = backend(messages)
    except BackendError as exc:
        raise BackendError(f"record {record.record_id!r}: {exc}") from exc
    return parse_extraction_output(raw, schema, record.history_preference)


def extract_dialogue_iterative(
    dialogue: MultiTurnDialogue,
    schema: PreferenceSchema,
    demos: Sequence[DemoExample],
    backend: Backend,
) -> list[PreferenceState]:
    """Iterate one-turn extraction over a dialogue, carrying the state forward.

    Returns the predicted cumulative state after every turn.  A failed parse
    carries the previous state forward; a backend failure aborts with the
    partial trajectory attached.
    """
    states: list[PreferenceState] = []
    carried = PreferenceState.empty()
    for t, turn in enumerate(dialogue.turns, start=1):
        record = IterChatRecord(
            record_id=f"{dialogue.dialogue_id}#t{t}",
            source_dialogue_id=dialogue.dialogue_id,
            turn_index=t,
            history_preference=carried,
            system_utterance=turn.system_utterance,
            user_utterance=turn.user_utterance,
        )
        try:
            result = extract_turn(record, schema, demos, backend)
        except BackendError as exc:
            raise ExtractionAborted(
                f"dialogue {dialogue.dialogue_id!r} aborted at turn {t}: {exc}",
                partial=states,
            ) from exc
        carried = result.preference_extraction
        states.append(carried)
    return states


def extract_dialogue_multiturn(
    dialogue: MultiTurnDialogue,
    schema: PreferenceSchema,
    demos: Sequence[DemoExample],
    backend: Backend,
) -> tuple[PreferenceState, str]:
    """Whole-dialogue extraction: one call, final state prediction."""
    messages = build_prompt("multi_turn", schema, demos, dialogue)
    try:
        raw = backend(messages)
    except BackendError as exc:
        raise BackendError(f"dialogue {dialogue.dialogue_id!r}: {exc}") from exc
    return parse_state_output(raw, schema)
