"""Incremental preference evolution: states, gains, apply, diff, canonical text.

A preference state maps slot names to value sets.  A gain is an ordered list
of edit operations turning one state into the next.  All value comparisons
use canonical normalization (Unicode trim + case-fold); original spellings
are preserved for display.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

from .errors import DatasetError, GainError

ApplyMode = Literal["strict", "lenient"]

OP_KINDS = ("add", "remove", "set", "clear")


def canonical(text: str) -> str:
    """Canonical form used for every slot/value equality check."""
    return text.strip().casefold()


def _dedupe(values: Iterable[str]) -> tuple[str, ...]:
    """Drop duplicates under canonical normalization, keep first spelling."""
    seen: set[str] = set()
    out: list[str] = []
    for v in values:
        key = canonical(v)
        if key and key not in seen:
            seen.add(key)
            out.append(v)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class PreferenceState:
    """Slot -> ordered value set.  Immutable; equality is canonical.

    Invariants: no slot maps to an empty set (an empty set means the slot is
    absent) and values within a slot are unique under normalization.
    """

    assignments: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Sequence[str]]) -> "PreferenceState":
        # Slots that collide under normalization are merged, first spelling wins.
        display: dict[str, str] = {}
        merged: dict[str, list[str]] = {}
        for slot, values in raw.items():
            if not isinstance(slot, str) or not canonical(slot):
                raise DatasetError(f"invalid slot name: {slot!r}")
            if isinstance(values, (str, bytes)):
                values = [values]
            key = canonical(slot)
            display.setdefault(key, slot)
            merged.setdefault(key, []).extend(str(v) for v in values)
        cleaned: dict[str, tuple[str, ...]] = {}
        for key, vals in merged.items():
            deduped = _dedupe(vals)
            if deduped:
                cleaned[display[key]] = deduped
        return cls(cleaned)

    @classmethod
    def empty(cls) -> "PreferenceState":
        return cls({})

    def slots(self) -> tuple[str, ...]:
        return tuple(self.assignments.keys())

    def values(self, slot: str) -> tuple[str, ...]:
        """Values for ``slot`` matched under normalization; () when absent."""
        key = canonical(slot)
        for name, vals in self.assignments.items():
            if canonical(name) == key:
                return vals
        return ()

    def has(self, slot: str, value: str | None = None) -> bool:
        vals = self.values(slot)
        if not vals:
            return False
        if value is None:
            return True
        return canonical(value) in {canonical(v) for v in vals}

    def is_empty(self) -> bool:
        return not self.assignments

    def to_json_dict(self) -> dict[str, list[str]]:
        """Deterministic JSON form: sorted slots, sorted values, original spellings."""
        out: dict[str, list[str]] = {}
        for slot in sorted(self.assignments, key=canonical):
            out[slot] = sorted(self.assignments[slot], key=canonical)
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PreferenceState):
            return NotImplemented
        return canonicalize(self) == canonicalize(other)

    def __hash__(self) -> int:
        return hash(canonicalize(self))

    def __repr__(self) -> str:
        return f"PreferenceState({canonicalize(self)!r})"


@dataclass(frozen=True)
class GainOp:
    """One edit: add/remove/set values on a slot, or clear the slot."""

    kind: str
    slot: str
    values: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise GainError(f"unknown op kind {self.kind!r}")
        if not canonical(self.slot):
            raise GainError("op slot name is empty")
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if self.kind == "clear":
            if self.values:
                raise GainError(f"clear op on {self.slot!r} must carry no values")
        elif not self.values:
            raise GainError(f"{self.kind} op on {self.slot!r} must carry at least one value")

    def to_json_dict(self) -> dict:
        return {"op": self.kind, "slot": self.slot, "values": list(self.values)}


@dataclass(frozen=True)
class StateGain:
    """Ordered edit operations; the canonical form is what diff_states emits."""

    ops: tuple[GainOp, ...] = ()

    @classmethod
    def from_json_list(cls, raw: Sequence[Mapping]) -> "StateGain":
        ops = []
        for entry in raw:
            if not isinstance(entry, Mapping):
                raise GainError(f"gain op must be an object, got {entry!r}")
            kind = str(entry.get("op", "")).strip().lower()
            slot = str(entry.get("slot", ""))
            values = entry.get("values", [])
            if isinstance(values, (str, bytes)):
                values = [values]
            ops.append(GainOp(kind=kind, slot=slot, values=tuple(str(v) for v in values)))
        return cls(tuple(ops))

    def to_json_list(self) -> list[dict]:
        return [op.to_json_dict() for op in self.ops]

    def is_empty(self) -> bool:
        return not self.ops

    def touched_slots(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for op in self.ops:
            seen.setdefault(op.slot, None)
        return tuple(seen)


def apply_gain(state: PreferenceState, gain: StateGain, mode: ApplyMode = "strict") -> PreferenceState:
    """Apply ops in order, returning a new state.

    strict: removing an absent value, or remove/clear on an absent slot, is
    an error naming the slot and value.  lenient: such ops are no-ops.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown apply mode {mode!r}")
    # Working copy keyed by canonical slot name; remembers display spellings.
    work: dict[str, list[str]] = {}
    display: dict[str, str] = {}
    for slot, vals in state.assignments.items():
        key = canonical(slot)
        work[key] = list(vals)
        display[key] = slot

    def present(key: str, value: str) -> bool:
        return canonical(value) in {canonical(v) for v in work.get(key, ())}

    for op in gain.ops:
        key = canonical(op.slot)
        display.setdefault(key, op.slot)
        if op.kind == "add":
            current = work.setdefault(key, [])
            for v in op.values:
                if canonical(v) not in {canonical(c) for c in current}:
                    current.append(v)
        elif op.kind == "remove":
            if key not in work:
                if mode == "strict":
                    raise GainError(f"remove on absent slot {op.slot!r}")
                continue
            for v in op.values:
                if not present(key, v):
                    if mode == "strict":
                        raise GainError(f"remove of absent value {v!r} on slot {op.slot!r}")
                    continue
                work[key] = [c for c in work[key] if canonical(c) != canonical(v)]
            if not work[key]:
                del work[key]
        elif op.kind == "set":
            vals = list(_dedupe(op.values))
            if vals:
                work[key] = vals
            else:
                work.pop(key, None)
        elif op.kind == "clear":
            if key not in work:
                if mode == "strict":
                    raise GainError(f"clear on absent slot {op.slot!r}")
                continue
            del work[key]

    return PreferenceState({display[key]: _dedupe(vals) for key, vals in work.items()})


def diff_states(old: PreferenceState, new: PreferenceState) -> StateGain:
    """Canonical gain from old to new: per-slot set difference.

    At most one add and one remove op per slot, add before remove, slots in
    sorted order, values sorted.  apply_gain(old, result, "strict") == new.
    """
    old_by_key = {canonical(s): (s, vals) for s, vals in old.assignments.items()}
    new_by_key = {canonical(s): (s, vals) for s, vals in new.assignments.items()}
    ops: list[GainOp] = []
    for key in sorted(set(old_by_key) | set(new_by_key)):
        old_slot, old_vals = old_by_key.get(key, ("", ()))
        new_slot, new_vals = new_by_key.get(key, ("", ()))
        slot_name = new_slot or old_slot
        old_keys = {canonical(v) for v in old_vals}
        new_keys = {canonical(v) for v in new_vals}
        added = [v for v in new_vals if canonical(v) not in old_keys]
        removed = [v for v in old_vals if canonical(v) not in new_keys]
        if added:
            ops.append(GainOp("add", slot_name, tuple(sorted(added, key=canonical))))
        if removed:
            ops.append(GainOp("remove", slot_name, tuple(sorted(removed, key=canonical))))
    return StateGain(tuple(ops))


def canonicalize(state: PreferenceState) -> str:
    """Deterministic text form: ``slot=[v1,v2]; slot2=[...]`` over normalized names.

    Equal states produce equal text; the empty state produces "".
    """
    parts = []
    for slot in sorted(state.assignments, key=canonical):
        vals = sorted(canonical(v) for v in state.assignments[slot])
        parts.append(f"{canonical(slot)}=[{','.join(vals)}]")
    return "; ".join(parts)


def states_equal(a: PreferenceState, b: PreferenceState) -> bool:
    return canonicalize(a) == canonicalize(b)
