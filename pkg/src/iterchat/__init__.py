"""Toolkit for history-plus-one-turn dialogue preference data.

Converts multi-turn task-oriented dialogues into one-turn records (history
preference + latest exchange), samples synthetic labeled records from a
preference schema, runs iterative one-turn extraction against pluggable LLM
backends, scores predictions, and serves an annotation workflow.
"""

__version__ = "0.1.0"

from .backends import BackendConfig, ChatMessage, complete, make_http_backend, template_complete
from .extraction import (
    DemoExample,
    ExtractionResult,
    build_prompt,
    extract_dialogue_iterative,
    extract_dialogue_multiturn,
    extract_turn,
    parse_extraction_output,
)
from .metrics import EvalReport, Prediction, bleu1, evaluate_corpus, exact_match, fed, slot_f1
from .records import (
    DialogueTurn,
    IterChatRecord,
    MultiTurnDialogue,
    explode,
    ingest_external,
    load_dialogues,
    load_records,
    replay,
    save_dialogues,
    save_records,
)
from .sampling import SamplerConfig, SampledScenario, generate_dataset, realize_record, sample_scenario
from .schema import (
    PreferenceSchema,
    SlotDefinition,
    draft_schema,
    parse_schema,
    serialize_schema,
    validate_assignment,
)
from .state import (
    GainOp,
    PreferenceState,
    StateGain,
    apply_gain,
    canonicalize,
    diff_states,
    states_equal,
)

__all__ = [
    "BackendConfig",
    "ChatMessage",
    "DemoExample",
    "DialogueTurn",
    "EvalReport",
    "ExtractionResult",
    "GainOp",
    "IterChatRecord",
    "MultiTurnDialogue",
    "Prediction",
    "PreferenceSchema",
    "PreferenceState",
    "SampledScenario",
    "SamplerConfig",
    "SlotDefinition",
    "StateGain",
    "apply_gain",
    "bleu1",
    "build_prompt",
    "canonicalize",
    "complete",
    "diff_states",
    "draft_schema",
    "evaluate_corpus",
    "exact_match",
    "explode",
    "extract_dialogue_iterative",
    "extract_dialogue_multiturn",
    "extract_turn",
    "fed",
    "generate_dataset",
    "ingest_external",
    "load_dialogues",
    "load_records",
    "make_http_backend",
    "parse_extraction_output",
    "parse_schema",
    "realize_record",
    "replay",
    "sample_scenario",
    "save_dialogues",
    "save_records",
    "serialize_schema",
    "slot_f1",
    "states_equal",
    "template_complete",
    "validate_assignment",
]
