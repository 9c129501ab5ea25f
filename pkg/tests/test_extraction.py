import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import hotel_schema, make_labeled_dialogue, stamped_user_text, wide_schema
from iterchat.backends import ChatMessage, template_complete
from iterchat.errors import BackendError, DatasetError, ExtractionAborted
from iterchat.extraction import (
    DemoExample,
    build_prompt,
    demo_from_record,
    extract_dialogue_iterative,
    extract_dialogue_multiturn,
    extract_turn,
    load_demos,
    parse_extraction_output,
    parse_state_output,
)
from iterchat.records import DialogueTurn, IterChatRecord, MultiTurnDialogue, explode, save_records
from iterchat.state import GainOp, PreferenceState, StateGain, diff_states


def stamped_record(history, gain, target, record_id="r1"):
    return IterChatRecord(
        record_id=record_id,
        history_preference=history,
        system_utterance="Anything else?",
        user_utterance=stamped_user_text(gain, target),
        source_dialogue_id=None,
        turn_index=None,
    )


def task_section(messages):
    user = messages[1].content
    return user[user.rindex("Task:"):]


class TestBuildPrompt:
    def test_iterchat_structure(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        record = IterChatRecord(
            record_id="r1",
            history_preference=history,
            system_utterance="What color?",
            user_utterance="I like red.",
        )
        demos = [DemoExample("History Preference: {}\nuser: hi", '{"state_gain": []}')] * 2
        messages = build_prompt("iterchat", schema, demos, record)
        assert [m.role for m in messages] == ["system", "user"]
        assert "price" in messages[0].content and "less than $50" in messages[0].content
        section = task_section(messages)
        assert section.count("\nuser: ") == 1
        assert section.count("History Preference:") == 1
        assert json.dumps(history.to_json_dict(), ensure_ascii=False) in section
        assert messages[1].content.count("Example ") == 2

    def test_zero_demos(self, schema):
        record = IterChatRecord(
            record_id="r1",
            history_preference=PreferenceState.empty(),
            system_utterance="",
            user_utterance="hi",
        )
        messages = build_prompt("iterchat", schema, [], record)
        assert "Example" not in messages[1].content
        assert "Task:" in messages[1].content

    def test_multi_turn_renders_all_turns(self, schema):
        turns = tuple(
            DialogueTurn(
                system_utterance="" if t == 0 else f"reply {t}",
                user_utterance=f"utterance {t}",
            )
            for t in range(3)
        )
        dialogue = MultiTurnDialogue(dialogue_id="d", domain_name="hotel", turns=turns)
        messages = build_prompt("multi_turn", schema, [], dialogue)
        section = task_section(messages)
        assert section.count("\nuser: ") == 3
        for t in range(3):
            assert f"utterance {t}" in section

    def test_mode_mismatch(self, schema):
        record = IterChatRecord(
            record_id="r1",
            history_preference=PreferenceState.empty(),
            system_utterance="",
            user_utterance="hi",
        )
        with pytest.raises(ValueError, match="multi_turn"):
            build_prompt("multi_turn", schema, [], record)
        dialogue = MultiTurnDialogue(
            dialogue_id="d",
            domain_name="hotel",
            turns=(DialogueTurn(system_utterance="", user_utterance="hi"),),
        )
        with pytest.raises(ValueError, match="iterchat"):
            build_prompt("iterchat", schema, [], dialogue)


class TestParseExtractionOutput:
    def test_both_keys_consistent(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        raw = json.dumps(
            {
                "state_gain": [{"op": "add", "slot": "color", "values": ["red"]}],
                "preference_extraction": {"price": ["less than $50"], "color": ["red"]},
            }
        )
        result = parse_extraction_output(raw, schema, history)
        assert result.parse_status == "ok"
        assert result.preference_extraction == PreferenceState.from_dict(
            {"price": ["less than $50"], "color": ["red"]}
        )

    def test_gain_only_derives_extraction(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        raw = json.dumps({"state_gain": [{"op": "add", "slot": "color", "values": ["red"]}]})
        result = parse_extraction_output(raw, schema, history)
        assert result.parse_status == "repaired"
        assert result.preference_extraction == PreferenceState.from_dict(
            {"price": ["less than $50"], "color": ["red"]}
        )

    def test_extraction_only_derives_gain(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        target = {"price": ["less than $50"], "color": ["red"]}
        raw = json.dumps({"preference_extraction": target})
        result = parse_extraction_output(raw, schema, history)
        assert result.parse_status == "repaired"
        assert result.state_gain.to_json_list() == [
            {"op": "add", "slot": "color", "values": ["red"]}
        ]

    def test_refusal_is_failed(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        result = parse_extraction_output("Sorry, I cannot help", schema, history)
        assert result.parse_status == "failed"
        assert result.preference_extraction == history
        assert result.state_gain.is_empty()

    def test_conflict_gain_wins(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        raw = json.dumps(
            {
                "state_gain": [{"op": "add", "slot": "color", "values": ["red"]}],
                "preference_extraction": {"color": ["blue"]},
            }
        )
        result = parse_extraction_output(raw, schema, history)
        assert result.parse_status == "repaired"
        assert result.preference_extraction == PreferenceState.from_dict(
            {"price": ["less than $50"], "color": ["red"]}
        )

    def test_schema_violations_flagged_but_kept(self, schema):
        history = PreferenceState.empty()
        raw = json.dumps(
            {"state_gain": [{"op": "add", "slot": "rating", "values": ["5"]}]}
        )
        result = parse_extraction_output(raw, schema, history)
        assert result.preference_extraction == PreferenceState.from_dict({"rating": ["5"]})
        assert any("rating" in v for v in result.schema_violations)

    @given(raw=st.text(max_size=300))
    @settings(max_examples=150)
    def test_total_on_arbitrary_text(self, raw):
        schema = hotel_schema()
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        result = parse_extraction_output(raw, schema, history)
        assert result.parse_status in ("ok", "repaired", "failed")
        assert result.preference_extraction is not None

    def test_parse_state_output_contract(self, schema):
        state, status = parse_state_output(
            json.dumps({"preference_extraction": {"color": ["red"]}}), schema
        )
        assert status == "ok"
        assert state == PreferenceState.from_dict({"color": ["red"]})
        state, status = parse_state_output(json.dumps({"color": ["red"]}), schema)
        assert status == "repaired"
        assert state == PreferenceState.from_dict({"color": ["red"]})
        state, status = parse_state_output("nothing", schema)
        assert status == "failed"
        assert state == PreferenceState.empty()


class TestExtractTurn:
    def test_echo_matches_gold(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        target = PreferenceState.from_dict({"price": ["less than $50"], "color": ["red"]})
        record = stamped_record(history, diff_states(history, target), target)
        result = extract_turn(record, schema, [], template_complete)
        assert result.parse_status == "ok"
        assert result.preference_extraction == target

    def test_empty_gain_extraction_equals_history(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        record = stamped_record(history, StateGain(()), history)
        result = extract_turn(record, schema, [], template_complete)
        assert result.state_gain.is_empty()
        assert result.preference_extraction == history

    def test_from_empty_history(self, schema):
        target = PreferenceState.from_dict({"color": ["red"]})
        record = stamped_record(PreferenceState.empty(), diff_states(PreferenceState.empty(), target), target)
        assert "I like red." in record.user_utterance
        result = extract_turn(record, schema, [], template_complete)
        assert result.preference_extraction == target

    def test_record_not_mutated(self, schema):
        history = PreferenceState.from_dict({"price": ["less than $50"]})
        target = PreferenceState.from_dict({"price": ["less than $50"], "color": ["red"]})
        record = stamped_record(history, diff_states(history, target), target)
        before = (record.record_id, record.user_utterance, record.history_preference)
        extract_turn(record, schema, [], template_complete)
        assert (record.record_id, record.user_utterance, record.history_preference) == before

    def test_backend_error_carries_record_id(self, schema):
        def broken(messages):
            raise BackendError("boom")

        record = stamped_record(
            PreferenceState.empty(),
            StateGain((GainOp("add", "color", ("red",)),)),
            PreferenceState.from_dict({"color": ["red"]}),
            record_id="rec-7",
        )
        with pytest.raises(BackendError, match="rec-7"):
            extract_turn(record, schema, [], broken)


class TestIterativeLoop:
    def test_gold_trajectory_reproduced(self, big_schema):
        rng = random.Random(21)
        for i in range(10):
            dialogue = make_labeled_dialogue(big_schema, rng, f"d{i}", rng.randint(2, 6))
            states = extract_dialogue_iterative(dialogue, big_schema, [], template_complete)
            gold = [t.gold_state for t in dialogue.turns]
            assert states == gold

    def test_single_turn_base_case(self, schema):
        target = PreferenceState.from_dict({"color": ["red"]})
        gain = diff_states(PreferenceState.empty(), target)
        dialogue = MultiTurnDialogue(
            dialogue_id="d",
            domain_name="hotel",
            turns=(
                DialogueTurn(
                    system_utterance="",
                    user_utterance=stamped_user_text(gain, target),
                    gold_state=target,
                ),
            ),
        )
        states = extract_dialogue_iterative(dialogue, schema, [], template_complete)
        assert states == [target]

    def test_parse_failure_carries_state_forward(self, schema):
        calls = {"n": 0}

        def flaky(messages):
            calls["n"] += 1
            if calls["n"] == 2:
                return "no json at all"
            return template_complete(messages)

        rng = random.Random(2)
        dialogue = make_labeled_dialogue(hotel_schema(), rng, "d", 3)
        states = extract_dialogue_iterative(dialogue, schema, [], flaky)
        assert len(states) == 3
        assert states[1] == states[0]

    def test_backend_failure_attaches_partial(self, schema):
        calls = {"n": 0}

        def dying(messages):
            calls["n"] += 1
            if calls["n"] == 3:
                raise BackendError("connection lost")
            return template_complete(messages)

        rng = random.Random(3)
        dialogue = make_labeled_dialogue(hotel_schema(), rng, "d", 4)
        with pytest.raises(ExtractionAborted) as excinfo:
            extract_dialogue_iterative(dialogue, schema, [], dying)
        assert len(excinfo.value.partial) == 2


class TestMultiTurnMode:
    def test_final_state_from_last_stamp(self, schema):
        rng = random.Random(9)
        dialogue = make_labeled_dialogue(hotel_schema(), rng, "d", 4)
        state, status = extract_dialogue_multiturn(dialogue, schema, [], template_complete)
        assert status == "ok"
        assert state == dialogue.turns[-1].gold_state


class TestDemos:
    def test_demo_from_record_requires_labels(self):
        record = IterChatRecord(
            record_id="r",
            history_preference=PreferenceState.empty(),
            system_utterance="",
            user_utterance="hi",
        )
        with pytest.raises(DatasetError, match="unlabeled"):
            demo_from_record(record)

    def test_load_demos_first_k(self, tmp_path, big_schema):
        rng = random.Random(8)
        records = [
            r
            for i in range(3)
            for r in explode(make_labeled_dialogue(big_schema, rng, f"d{i}", 2))
        ]
        path = tmp_path / "demos.jsonl"
        save_records(path, records)
        demos = load_demos(path, "iterchat", 2)
        assert len(demos) == 2
        assert demos[0].input_text.startswith("History Preference:")
        assert "state_gain" in demos[0].output_text
