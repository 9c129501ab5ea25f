"""Preference schemas: parse, serialize, validate assignments, LLM-assisted drafting.

Schema file format (JSON)::

    {"domain_name": str, "version": str,
     "slots": [{"name": str, "description": str, "multi_valued": bool,
                "allow_free_values": bool, "schema_values": [str]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .backends import Backend, ChatMessage, format_directive
from .errors import DraftParseError, SchemaError
from .state import canonical
from .templates import load_prompt_template


@dataclass(frozen=True)
class SlotDefinition:
    """One preference facet: a named slot with candidate values."""

    name: str
    description: str = ""
    multi_valued: bool = False
    schema_values: tuple[str, ...] = ()
    allow_free_values: bool = False

    def __post_init__(self):
        if not isinstance(self.name, str) or not canonical(self.name):
            raise SchemaError(f"slot name must be non-empty, got {self.name!r}")
        object.__setattr__(self, "schema_values", tuple(str(v) for v in self.schema_values))
        if not self.allow_free_values and not self.schema_values:
            raise SchemaError(f"slot {self.name!r} is closed but lists no schema_values")
        seen: set[str] = set()
        for v in self.schema_values:
            key = canonical(v)
            if key in seen:
                raise SchemaError(f"slot {self.name!r} has duplicate value {v!r}")
            seen.add(key)

    def allows_value(self, value: str) -> bool:
        if self.allow_free_values:
            return True
        return canonical(value) in {canonical(v) for v in self.schema_values}

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "multi_valued": self.multi_valued,
            "allow_free_values": self.allow_free_values,
            "schema_values": list(self.schema_values),
        }


@dataclass(frozen=True)
class PreferenceSchema:
    """The slot universe for one task domain."""

    domain_name: str
    version: str
    slots: tuple[SlotDefinition, ...] = ()

    def __post_init__(self):
        if not self.slots:
            raise SchemaError("empty slot list")
        seen: set[str] = set()
        for slot in self.slots:
            key = canonical(slot.name)
            if key in seen:
                raise SchemaError(f"duplicate slot name {slot.name!r}")
            seen.add(key)

    def slot(self, name: str) -> SlotDefinition | None:
        key = canonical(name)
        for s in self.slots:
            if canonical(s.name) == key:
                return s
        return None

    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)

    def to_json_dict(self) -> dict:
        return {
            "domain_name": self.domain_name,
            "version": self.version,
            "slots": [s.to_json_dict() for s in self.slots],
        }


@dataclass(frozen=True)
class AssignmentReport:
    """Structured validity result; callers decide severity."""

    valid: bool
    reasons: tuple[str, ...] = ()


def parse_schema(document: str) -> PreferenceSchema:
    """Parse the JSON schema format; errors name the offending slot."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed schema document: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("malformed schema document: top level must be an object")
    slots_raw = raw.get("slots")
    if not isinstance(slots_raw, list) or not slots_raw:
        raise SchemaError("empty slot list")
    slots = []
    for entry in slots_raw:
        if not isinstance(entry, dict):
            raise SchemaError(f"malformed slot entry: {entry!r}")
        name = entry.get("name", "")
        slots.append(
            SlotDefinition(
                name=str(name),
                description=str(entry.get("description", "")),
                multi_valued=bool(entry.get("multi_valued", False)),
                schema_values=tuple(str(v) for v in entry.get("schema_values", [])),
                allow_free_values=bool(entry.get("allow_free_values", False)),
            )
        )
    return PreferenceSchema(
        domain_name=str(raw.get("domain_name", "")),
        version=str(raw.get("version", "")),
        slots=tuple(slots),
    )


def serialize_schema(schema: PreferenceSchema) -> str:
    """Inverse of parse_schema (fixed key order, 2-space indent)."""
    return json.dumps(schema.to_json_dict(), indent=2, ensure_ascii=False)


def validate_assignment(schema: PreferenceSchema, slot: str, values: Sequence[str]) -> AssignmentReport:
    """Check one slot assignment against the schema.

    An empty value list is valid (slot untouched).  Values must be schema
    values (after normalization) unless the slot allows free values; a
    single-valued slot takes at most one value.
    """
    definition = schema.slot(slot)
    if definition is None:
        return AssignmentReport(False, (f"unknown slot {slot!r}",))
    reasons: list[str] = []
    if not definition.multi_valued and len(values) > 1:
        reasons.append(f"slot {slot!r} is single-valued but got {len(values)} values")
    for v in values:
        if not definition.allows_value(v):
            reasons.append(f"value {v!r} not allowed for slot {slot!r}")
    return AssignmentReport(not reasons, tuple(reasons))


def extract_json_block(text: str) -> dict | None:
    """First balanced top-level JSON object in text, or None."""
    depth = 0
    start = None
    in_string = False
    escape = False
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0 and start is not None:
                    try:
                        candidate = json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        start = None
                        continue
                    if isinstance(candidate, dict):
                        return candidate
                    start = None
    return None


def draft_schema(domain_description: str, backend: Backend, max_slots: int) -> PreferenceSchema:
    """Draft a schema via the generation backend and re-validate it.

    Single call asking for slots and candidate values together; when the
    reply leaves closed slots without values, a second call fills them in.
    The reply is never trusted: it is re-parsed through parse_schema.
    """
    if max_slots < 1:
        raise SchemaError("max_slots must be >= 1")
    system = load_prompt_template("draft_schema.v1.txt").format(max_slots=max_slots)
    directive = format_directive(
        {"kind": "schema_draft", "domain_name": domain_description, "max_slots": max_slots}
    )
    user = f"Domain description: {domain_description}\n{directive}"
    messages = [
        ChatMessage("system", system),
        ChatMessage("user", user),
    ]
    reply = backend(messages)
    raw = extract_json_block(reply)
    if raw is None:
        raise DraftParseError("backend reply contains no JSON schema", raw_reply=reply)
    raw.setdefault("domain_name", domain_description)
    raw.setdefault("version", "draft-1")
    slots = raw.get("slots")
    if not isinstance(slots, list) or not slots:
        raise DraftParseError("backend reply has no slot list", raw_reply=reply)
    raw["slots"] = slots[:max_slots]

    needs_values = [
        s for s in raw["slots"]
        if isinstance(s, dict) and not s.get("allow_free_values") and not s.get("schema_values")
    ]
    if needs_values:
        names = [str(s.get("name", "")) for s in needs_values]
        follow_up = load_prompt_template("draft_values.v1.txt").format(
            slot_names=", ".join(names)
        )
        directive2 = format_directive({"kind": "schema_values", "slots": names})
        reply2 = backend(
            messages
            + [
                ChatMessage("assistant", reply),
                ChatMessage("user", f"{follow_up}\n{directive2}"),
            ]
        )
        values_raw = extract_json_block(reply2)
        if values_raw is None:
            raise DraftParseError("value follow-up reply contains no JSON", raw_reply=reply2)
        for s in needs_values:
            name = str(s.get("name", ""))
            if name in values_raw and isinstance(values_raw[name], list):
                s["schema_values"] = [str(v) for v in values_raw[name]]

    try:
        return parse_schema(json.dumps(raw, ensure_ascii=False))
    except SchemaError as exc:
        raise DraftParseError(f"drafted schema invalid: {exc}", raw_reply=reply) from exc
