"""Shared builders for schemas, random states, and stamped synthetic dialogues."""

from __future__ import annotations

import random

from iterchat.backends import format_directive, realized_user_line
from iterchat.records import DialogueTurn, MultiTurnDialogue
from iterchat.schema import PreferenceSchema, SlotDefinition
from iterchat.state import PreferenceState, StateGain, diff_states

HOTEL_SLOTS = (
    SlotDefinition(
        name="price",
        description="accepted price range",
        multi_valued=False,
        schema_values=("less than $50", "between $100 and $200", "None"),
    ),
    SlotDefinition(
        name="color",
        description="preferred colors",
        multi_valued=True,
        schema_values=("red", "blue", "black"),
    ),
    SlotDefinition(
        name="brand",
        description="preferred brands",
        multi_valued=True,
        schema_values=("acme", "contoso", "globex"),
        allow_free_values=True,
    ),
)


def hotel_schema() -> PreferenceSchema:
    return PreferenceSchema(domain_name="hotel", version="1", slots=HOTEL_SLOTS)


def wide_schema(n_slots: int = 10, n_values: int = 8) -> PreferenceSchema:
    slots = tuple(
        SlotDefinition(
            name=f"slot{i}",
            description=f"facet {i}",
            multi_valued=True,
            schema_values=tuple(f"value-{i}-{j}" for j in range(n_values)),
        )
        for i in range(n_slots)
    )
    return PreferenceSchema(domain_name="wide", version="1", slots=slots)


def random_state(rng: random.Random, schema: PreferenceSchema, max_values: int = 3) -> PreferenceState:
    assignments = {}
    n = rng.randint(0, len(schema.slots))
    for slot in rng.sample(list(schema.slots), n):
        cap = max_values if slot.multi_valued else 1
        k = rng.randint(1, min(cap, len(slot.schema_values)))
        assignments[slot.name] = rng.sample(list(slot.schema_values), k)
    return PreferenceState.from_dict(assignments)


def stamped_user_text(gain: StateGain, target: PreferenceState) -> str:
    """Synthetic user utterance carrying the oracle directive for echo backends."""
    visible = " ".join(
        line for line in (realized_user_line(op) for op in gain.to_json_list()) if line
    )
    stamp = format_directive(
        {
            "kind": "extract",
            "state_gain": gain.to_json_list(),
            "preference_extraction": target.to_json_dict(),
        }
    )
    return f"{visible or 'Hmm.'}\n{stamp}"


def make_labeled_dialogue(
    schema: PreferenceSchema,
    rng: random.Random,
    dialogue_id: str,
    n_turns: int,
) -> MultiTurnDialogue:
    """Random walk over schema-valid states; utterances carry oracle stamps."""
    turns = []
    current = PreferenceState.empty()
    for t in range(1, n_turns + 1):
        target = random_state(rng, schema)
        for _ in range(20):
            if target != current:
                break
            target = random_state(rng, schema)
        gain = diff_states(current, target)
        turns.append(
            DialogueTurn(
                system_utterance="" if t == 1 else "Noted.",
                user_utterance=stamped_user_text(gain, target),
                gold_state=target,
            )
        )
        current = target
    return MultiTurnDialogue(dialogue_id=dialogue_id, domain_name=schema.domain_name, turns=tuple(turns))
