/**
 * Client-side mirror of the server's strict gain application and canonical
 * state text. The server stays authoritative: on every accepted submission
 * the preview computed here is compared against the server's derived state,
 * and any divergence is surfaced as a defect.
 */

import type { GainRow, RowFlag, Schema, SlotDef, StateJson } from './types.js';

/** Normalization used for every slot/value comparison (trim + case-fold). */
export function canon(text: string): string {
  return text.trim().toLowerCase();
}

function findSlot(schema: Schema, name: string): SlotDef | undefined {
  const key = canon(name);
  return schema.slots.find((s) => canon(s.name) === key);
}

function allowsValue(slot: SlotDef, value: string): boolean {
  if (slot.allow_free_values) return true;
  const key = canon(value);
  return slot.schema_values.some((v) => canon(v) === key);
}

function codePointCompare(a: string, b: string): number {
  return a < b ? -1 : a > b ? 1 : 0;
}

/** Canonical text form: sorted slots, sorted normalized values. */
export function canonicalize(state: StateJson): string {
  const parts: string[] = [];
  const slots = Object.keys(state)
    .filter((slot) => (state[slot] ?? []).length > 0)
    .sort((a, b) => codePointCompare(canon(a), canon(b)));
  for (const slot of slots) {
    const values = [...new Set((state[slot] ?? []).map(canon))].sort(codePointCompare);
    parts.push(`${canon(slot)}=[${values.join(',')}]`);
  }
  return parts.join('; ');
}

export function statesEqual(a: StateJson, b: StateJson): boolean {
  return canonicalize(a) === canonicalize(b);
}

/** Mutable working copy keyed by canonical slot name. */
interface WorkState {
  values: Map<string, string[]>;
  display: Map<string, string>;
}

function workFrom(history: StateJson): WorkState {
  const work: WorkState = { values: new Map(), display: new Map() };
  for (const [slot, values] of Object.entries(history)) {
    const key = canon(slot);
    work.values.set(key, [...values]);
    work.display.set(key, slot);
  }
  return work;
}

function workToState(work: WorkState): StateJson {
  const out: StateJson = {};
  for (const [key, values] of work.values) {
    if (values.length > 0) out[work.display.get(key) ?? key] = [...values];
  }
  return out;
}

function hasValue(values: string[], value: string): boolean {
  const key = canon(value);
  return values.some((v) => canon(v) === key);
}

function applyRow(work: WorkState, row: GainRow): void {
  const key = canon(row.slot);
  if (!work.display.has(key)) work.display.set(key, row.slot);
  const current = work.values.get(key) ?? [];
  switch (row.op) {
    case 'add': {
      const next = [...current];
      for (const v of row.values) if (!hasValue(next, v)) next.push(v);
      work.values.set(key, next);
      break;
    }
    case 'remove': {
      const next = current.filter((v) => !row.values.some((r) => canon(r) === canon(v)));
      if (next.length > 0) work.values.set(key, next);
      else work.values.delete(key);
      break;
    }
    case 'set': {
      const next: string[] = [];
      for (const v of row.values) if (!hasValue(next, v)) next.push(v);
      if (next.length > 0) work.values.set(key, next);
      else work.values.delete(key);
      break;
    }
    case 'clear':
      work.values.delete(key);
      break;
  }
}

/**
 * Strict-mode validation of the editor rows, in order, against the history.
 * Mirrors the server: each row's effect is applied best-effort even when the
 * row is flagged, then single-valued slots are checked on the final state.
 */
export function validateRows(history: StateJson, rows: GainRow[], schema: Schema): RowFlag[] {
  const flags: RowFlag[] = rows.map(() => ({ valid: true, reasons: [] }));
  const work = workFrom(history);

  const flag = (index: number, reason: string): void => {
    const entry = flags[index];
    if (entry) {
      entry.valid = false;
      entry.reasons.push(reason);
    }
  };

  rows.forEach((row, index) => {
    if (!row.slot.trim()) {
      flag(index, 'pick a slot');
      return;
    }
    const slotDef = findSlot(schema, row.slot);
    if (!slotDef) {
      flag(index, `unknown slot "${row.slot}"`);
      return;
    }
    const values = row.values.map((v) => v).filter((v) => v.trim() !== '');
    if (row.op !== 'clear' && values.length === 0) {
      flag(index, `${row.op} needs at least one value`);
      return;
    }
    const key = canon(row.slot);
    const current = work.values.get(key);
    if (row.op === 'add' || row.op === 'set') {
      for (const v of values) {
        if (!allowsValue(slotDef, v)) flag(index, `value "${v}" not allowed for ${slotDef.name}`);
      }
    } else if (row.op === 'remove') {
      if (current === undefined) {
        flag(index, `remove on absent slot "${slotDef.name}"`);
      } else {
        for (const v of values) {
          if (!hasValue(current, v)) flag(index, `"${v}" is not set on ${slotDef.name}`);
        }
      }
    } else if (row.op === 'clear') {
      if (current === undefined) flag(index, `clear on absent slot "${slotDef.name}"`);
    }
    applyRow(work, { ...row, values });
  });

  // cardinality on the final state, attributed to the contributing rows
  for (const [key, values] of work.values) {
    const slotDef = findSlot(schema, work.display.get(key) ?? key);
    if (slotDef && !slotDef.multi_valued && values.length > 1) {
      rows.forEach((row, index) => {
        if (canon(row.slot) === key && (row.op === 'add' || row.op === 'set')) {
          flag(index, `${slotDef.name} is single-valued but would end with ${values.length} values`);
        }
      });
    }
  }
  return flags;
}

/** Preview: apply only the valid rows, in order, over the history. */
export function previewState(history: StateJson, rows: GainRow[], schema: Schema): StateJson {
  const flags = validateRows(history, rows, schema);
  const work = workFrom(history);
  rows.forEach((row, index) => {
    if (flags[index]?.valid) {
      applyRow(work, { ...row, values: row.values.filter((v) => v.trim() !== '') });
    }
  });
  return workToState(work);
}

/** Editor rows as the wire-format gain list. */
export function rowsToGain(rows: GainRow[]): { op: GainRow['op']; slot: string; values: string[] }[] {
  return rows.map((row) => ({
    op: row.op,
    slot: row.slot,
    values: row.op === 'clear' ? [] : row.values.filter((v) => v.trim() !== ''),
  }));
}
