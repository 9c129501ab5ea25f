"""Schema-driven scenario sampling and one-turn dialogue realization.

A scenario is drawn first (history state, target state, gain between them),
then a generation backend verbalizes it as one (system, user) exchange; the
labels are fixed before any text is generated, so emitted records are
consistent by construction.

All draws are uniform within config-declared ranges, from one seeded RNG
stream, so identical configs reproduce byte-identical datasets under the
template backend.
"""

from __future__ import annotations

import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Mapping

from .backends import Backend, ChatMessage, format_directive
from .errors import BackendError, GenerationAborted, SamplerError
from .records import IterChatRecord
from .schema import PreferenceSchema, SlotDefinition, extract_json_block
from .state import PreferenceState, StateGain, apply_gain, canonical, diff_states
from .templates import load_prompt_template

MOVE_KINDS = ("add_new_slot", "add_value_to_existing", "remove_value", "update_value")

REALIZE_RETRY_LIMIT = 3

_TIMESTAMP_BASE = datetime(2024, 1, 1, 0, 0, 0)
_TIMESTAMP_WINDOW_MINUTES = 365 * 24 * 60


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    record_count: int
    history_slot_count: tuple[int, int] = (0, 2)
    history_turn_count: tuple[int, int] = (1, 8)
    ops_per_record: tuple[int, int] = (1, 2)
    gain_mix: Mapping[str, float] = field(
        default_factory=lambda: {k: 1.0 for k in MOVE_KINDS}
    )

    def __post_init__(self):
        if self.record_count < 1:
            raise SamplerError("record_count must be >= 1")
        for name in ("history_slot_count", "history_turn_count", "ops_per_record"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SamplerError(f"{name} range is empty: [{lo}, {hi}]")
            if lo < 0:
                raise SamplerError(f"{name} range must be non-negative")
        if self.ops_per_record[0] < 1:
            raise SamplerError("ops_per_record must start at 1; records need a non-empty gain")
        unknown = set(self.gain_mix) - set(MOVE_KINDS)
        if unknown:
            raise SamplerError(f"unknown gain_mix kinds: {sorted(unknown)}")
        if any(w < 0 for w in self.gain_mix.values()):
            raise SamplerError("gain_mix weights must be non-negative")
        if not any(w > 0 for w in self.gain_mix.values()):
            raise SamplerError("gain_mix needs at least one positive weight")

    @classmethod
    def from_json_dict(cls, raw: Mapping) -> "SamplerConfig":
        def pair(name, default):
            value = raw.get(name, default)
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise SamplerError(f"{name} must be a [lo, hi] pair")
            return (int(value[0]), int(value[1]))

        return cls(
            seed=int(raw.get("seed", 0)),
            record_count=int(raw.get("record_count", 1)),
            history_slot_count=pair("history_slot_count", (0, 2)),
            history_turn_count=pair("history_turn_count", (1, 8)),
            ops_per_record=pair("ops_per_record", (1, 2)),
            gain_mix={str(k): float(v) for k, v in raw.get(
                "gain_mix", {k: 1.0 for k in MOVE_KINDS}
            ).items()},
        )

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "record_count": self.record_count,
            "history_slot_count": list(self.history_slot_count),
            "history_turn_count": list(self.history_turn_count),
            "ops_per_record": list(self.ops_per_record),
            "gain_mix": dict(self.gain_mix),
        }


@dataclass(frozen=True)
class SampledScenario:
    history_state: PreferenceState
    target_state: PreferenceState
    gain: StateGain
    context_meta: dict


@dataclass
class GenerationStats:
    requested: int = 0
    emitted: int = 0
    realization_failures: int = 0
    exhausted_scenarios: int = 0
    op_counts: dict[str, int] = field(default_factory=lambda: {"add": 0, "remove": 0})
    slot_coverage: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "requested": self.requested,
            "emitted": self.emitted,
            "realization_failures": self.realization_failures,
            "exhausted_scenarios": self.exhausted_scenarios,
            "op_counts": dict(self.op_counts),
            "slot_coverage": {k: self.slot_coverage[k] for k in sorted(self.slot_coverage)},
        }


def _samplable_slots(schema: PreferenceSchema) -> list[SlotDefinition]:
    # Only slots with concrete candidate values can be drawn from.
    return [s for s in schema.slots if s.schema_values]


class _Workspace:
    """Mutable slot->values map plus the no-cancel bookkeeping for one scenario."""

    def __init__(self, history: dict[str, list[str]]):
        self.state = {slot: list(vals) for slot, vals in history.items()}
        self.touched: set[tuple[str, str]] = set()

    def pair(self, slot: str, value: str) -> tuple[str, str]:
        return (canonical(slot), canonical(value))

    def assigned(self, slot: SlotDefinition) -> list[str]:
        return self.state.get(slot.name, [])

    def addable_values(self, slot: SlotDefinition) -> list[str]:
        current = {canonical(v) for v in self.assigned(slot)}
        return [
            v
            for v in slot.schema_values
            if canonical(v) not in current and self.pair(slot.name, v) not in self.touched
        ]

    def removable_values(self, slot: SlotDefinition) -> list[str]:
        return [
            v for v in self.assigned(slot) if self.pair(slot.name, v) not in self.touched
        ]

    def add(self, slot: SlotDefinition, value: str) -> None:
        self.state.setdefault(slot.name, []).append(value)
        self.touched.add(self.pair(slot.name, value))

    def remove(self, slot: SlotDefinition, value: str) -> None:
        self.state[slot.name] = [
            v for v in self.state[slot.name] if canonical(v) != canonical(value)
        ]
        if not self.state[slot.name]:
            del self.state[slot.name]
        self.touched.add(self.pair(slot.name, value))


def _feasible_moves(work: _Workspace, slots: list[SlotDefinition], config: SamplerConfig):
    """Map move kind -> candidate slots, over positive-weight kinds only."""
    weighted = [k for k in MOVE_KINDS if config.gain_mix.get(k, 0.0) > 0]
    feasible: dict[str, list[SlotDefinition]] = {}
    for kind in weighted:
        candidates = []
        for slot in slots:
            in_state = bool(work.assigned(slot))
            if kind == "add_new_slot" and not in_state and work.addable_values(slot):
                candidates.append(slot)
            elif (
                kind == "add_value_to_existing"
                and in_state
                and slot.multi_valued
                and work.addable_values(slot)
            ):
                candidates.append(slot)
            elif kind == "remove_value" and in_state and work.removable_values(slot):
                candidates.append(slot)
            elif (
                kind == "update_value"
                and in_state
                and work.removable_values(slot)
                and work.addable_values(slot)
            ):
                candidates.append(slot)
        if candidates:
            feasible[kind] = candidates
    return feasible


def sample_scenario(
    schema: PreferenceSchema, config: SamplerConfig, rng: random.Random
) -> SampledScenario:
    """Draw one scenario: history subset, gain moves, resulting target state."""
    slots = _samplable_slots(schema)
    if not slots:
        raise SamplerError("schema has no slots with schema_values to sample from")
    lo, hi = config.history_slot_count
    if lo > len(slots):
        raise SamplerError(
            f"history_slot_count asks for {lo} slots but only {len(slots)} are samplable"
        )
    n_history = rng.randint(lo, min(hi, len(slots)))
    history_raw: dict[str, list[str]] = {}
    for slot in rng.sample(slots, n_history):
        history_raw[slot.name] = [rng.choice(slot.schema_values)]
    history = PreferenceState.from_dict(history_raw)

    work = _Workspace(history_raw)
    n_moves = rng.randint(*config.ops_per_record)
    for _ in range(n_moves):
        feasible = _feasible_moves(work, slots, config)
        if not feasible:
            positive = [k for k in MOVE_KINDS if config.gain_mix.get(k, 0.0) > 0]
            raise SamplerError(
                f"no feasible gain move: kinds {positive} cannot apply to the sampled"
                f" state (slots assigned: {sorted(work.state)})"
            )
        kinds = sorted(feasible)
        kind = rng.choices(kinds, weights=[config.gain_mix[k] for k in kinds])[0]
        slot = rng.choice(feasible[kind])
        if kind == "add_new_slot" or kind == "add_value_to_existing":
            work.add(slot, rng.choice(work.addable_values(slot)))
        elif kind == "remove_value":
            work.remove(slot, rng.choice(work.removable_values(slot)))
        elif kind == "update_value":
            old = rng.choice(work.removable_values(slot))
            work.remove(slot, old)
            new = rng.choice(work.addable_values(slot))
            work.add(slot, new)

    target = PreferenceState.from_dict(work.state)
    gain = diff_states(history, target)
    minutes = rng.randrange(_TIMESTAMP_WINDOW_MINUTES)
    context_meta = {
        "past_turn_count": rng.randint(*config.history_turn_count),
        "timestamp": (_TIMESTAMP_BASE + timedelta(minutes=minutes)).isoformat(),
    }
    scenario = SampledScenario(
        history_state=history, target_state=target, gain=gain, context_meta=context_meta
    )
    # Construction guarantees this; keep the check cheap and loud.
    assert apply_gain(history, gain, "strict") == target
    return scenario


def realize_record(
    scenario: SampledScenario,
    schema: PreferenceSchema,
    backend: Backend,
    record_id: str = "sampled",
) -> IterChatRecord:
    """Verbalize a scenario; labels come from the scenario, never the text."""
    if scenario.gain.is_empty():
        raise SamplerError("scenario gain is empty; nothing to realize")
    system_text = load_prompt_template("realize_turn.v1.txt").format(
        domain_name=schema.domain_name or "task-oriented"
    )
    directive = format_directive(
        {
            "kind": "realize",
            "state_gain": scenario.gain.to_json_list(),
            "preference_extraction": scenario.target_state.to_json_dict(),
        }
    )
    user_text = (
        f"Current preference state: {json.dumps(scenario.history_state.to_json_dict(), ensure_ascii=False)}\n"
        f"Conversation context: {json.dumps(scenario.context_meta, ensure_ascii=False)}\n"
        f"Required change: {json.dumps(scenario.gain.to_json_list(), ensure_ascii=False)}\n"
        f"{directive}"
    )
    reply = backend([ChatMessage("system", system_text), ChatMessage("user", user_text)])
    obj = extract_json_block(reply)
    if obj is None:
        raise SamplerError(f"realization reply contains no JSON object: {reply[:120]!r}")
    system_utterance = str(obj.get("system_utterance", ""))
    user_utterance = str(obj.get("user_utterance", ""))
    if not user_utterance.strip():
        raise SamplerError("generated user utterance is empty; record rejected")
    record = IterChatRecord(
        record_id=record_id,
        history_preference=scenario.history_state,
        system_utterance=system_utterance,
        user_utterance=user_utterance,
        state_gain=scenario.gain,
        preference_extraction=scenario.target_state,
    )
    record.validate_labels("strict")
    return record


def _realize_with_retries(
    scenario: SampledScenario,
    schema: PreferenceSchema,
    backend: Backend,
    record_id: str,
) -> tuple[IterChatRecord | None, int]:
    """Attempt realization up to the retry limit; returns (record, failure count)."""
    failures = 0
    for _ in range(REALIZE_RETRY_LIMIT):
        try:
            return realize_record(scenario, schema, backend, record_id=record_id), failures
        except (SamplerError, BackendError):
            failures += 1
    return None, failures


def generate_dataset(
    schema: PreferenceSchema,
    config: SamplerConfig,
    backend: Backend,
    jobs: int = 1,
) -> tuple[list[IterChatRecord], GenerationStats]:
    """Sample and realize config.record_count records.

    A scenario whose realization keeps failing is counted as exhausted and
    replaced by a fresh draw; when exhausted scenarios reach 10% of the
    request the run aborts, carrying the partial output.
    """
    rng = random.Random(config.seed)
    stats = GenerationStats(requested=config.record_count)
    abort_threshold = max(1, math.ceil(0.10 * config.record_count))

    def record_id(index: int) -> str:
        return f"gen-{config.seed}-{index:06d}"

    scenarios = [sample_scenario(schema, config, rng) for _ in range(config.record_count)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(
                pool.map(
                    lambda pair: _realize_with_retries(
                        pair[1], schema, backend, record_id(pair[0])
                    ),
                    enumerate(scenarios),
                )
            )
    else:
        outcomes = [
            _realize_with_retries(scenario, schema, backend, record_id(i))
            for i, scenario in enumerate(scenarios)
        ]
    slots: list[IterChatRecord | None] = []
    for record, failures in outcomes:
        stats.realization_failures += failures
        slots.append(record)

    for index in range(len(slots)):
        while slots[index] is None:
            stats.exhausted_scenarios += 1
            done = [r for r in slots if r is not None]
            if stats.exhausted_scenarios >= abort_threshold:
                raise GenerationAborted(
                    f"aborted: {stats.exhausted_scenarios} scenarios exhausted their"
                    f" realization retries (threshold {abort_threshold})",
                    partial=done,
                )
            replacement = sample_scenario(schema, config, rng)
            slots[index], failures = _realize_with_retries(
                replacement, schema, backend, record_id(index)
            )
            stats.realization_failures += failures

    records = [r for r in slots if r is not None]
    stats.emitted = len(records)
    for record in records:
        for op in record.state_gain.ops:
            stats.op_counts[op.kind] = stats.op_counts.get(op.kind, 0) + 1
        for slot in record.state_gain.touched_slots():
            stats.slot_coverage[slot] = stats.slot_coverage.get(slot, 0) + 1
    return records, stats
