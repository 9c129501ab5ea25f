import { describe, expect, it } from 'vitest';

import {
  canonicalize,
  previewState,
  rowsToGain,
  statesEqual,
  validateRows,
} from '../src/apply.js';
import type { GainRow, Schema } from '../src/types.js';

const schema: Schema = {
  domain_name: 'hotel',
  version: '1',
  slots: [
    {
      name: 'price',
      description: '',
      multi_valued: false,
      allow_free_values: false,
      schema_values: ['less than $50', 'between $100 and $200', 'None'],
    },
    {
      name: 'color',
      description: '',
      multi_valued: true,
      allow_free_values: false,
      schema_values: ['red', 'blue', 'black'],
    },
    {
      name: 'brand',
      description: '',
      multi_valued: true,
      allow_free_values: true,
      schema_values: ['acme'],
    },
  ],
};

function row(op: GainRow['op'], slot: string, values: string[] = []): GainRow {
  return { op, slot, values, suggested: false };
}

describe('canonicalize', () => {
  it('matches the server text form', () => {
    // fixture value mirrors the Python canonicalize() output
    expect(canonicalize({ color: ['red'], price: ['less than $50'] })).toBe(
      'color=[red]; price=[less than $50]',
    );
  });

  it('is empty for the empty state', () => {
    expect(canonicalize({})).toBe('');
  });

  it('normalizes order and case', () => {
    expect(
      statesEqual({ price: ['Less Than $50'] }, { PRICE: ['less than $50'] }),
    ).toBe(true);
  });
});

describe('validateRows', () => {
  const history = { price: ['less than $50'] };

  it('accepts a valid add', () => {
    const flags = validateRows(history, [row('add', 'color', ['red'])], schema);
    expect(flags[0]?.valid).toBe(true);
  });

  it('flags unknown slots', () => {
    const flags = validateRows(history, [row('add', 'rating', ['5'])], schema);
    expect(flags[0]?.valid).toBe(false);
    expect(flags[0]?.reasons[0]).toContain('unknown slot');
  });

  it('flags closed-schema values', () => {
    const flags = validateRows(history, [row('add', 'color', ['chartreuse'])], schema);
    expect(flags[0]?.valid).toBe(false);
  });

  it('allows free values where the schema permits', () => {
    const flags = validateRows(history, [row('add', 'brand', ['brand new brand'])], schema);
    expect(flags[0]?.valid).toBe(true);
  });

  it('flags remove of an absent value', () => {
    const flags = validateRows(history, [row('remove', 'price', ['None'])], schema);
    expect(flags[0]?.valid).toBe(false);
    expect(flags[0]?.reasons[0]).toContain('not set');
  });

  it('flags remove on an absent slot', () => {
    const flags = validateRows(history, [row('remove', 'brand', ['acme'])], schema);
    expect(flags[0]?.reasons[0]).toContain('absent slot');
  });

  it('is order-aware: remove after add is valid', () => {
    const rows = [row('add', 'color', ['red']), row('remove', 'color', ['red'])];
    const flags = validateRows(history, rows, schema);
    expect(flags.every((f) => f.valid)).toBe(true);
  });

  it('flags single-valued overflow on the final state', () => {
    const flags = validateRows(history, [row('add', 'price', ['None'])], schema);
    expect(flags[0]?.valid).toBe(false);
    expect(flags[0]?.reasons[0]).toContain('single-valued');
  });

  it('requires values for non-clear ops', () => {
    const flags = validateRows(history, [row('add', 'color', [])], schema);
    expect(flags[0]?.valid).toBe(false);
  });
});

describe('previewState', () => {
  const history = { price: ['less than $50'] };

  it('applies valid rows only', () => {
    const rows = [row('add', 'color', ['red']), row('add', 'rating', ['5'])];
    expect(previewState(history, rows, schema)).toEqual({
      price: ['less than $50'],
      color: ['red'],
    });
  });

  it('is identity with no rows', () => {
    expect(previewState(history, [], schema)).toEqual(history);
  });

  it('set replaces and clear drops', () => {
    const rows = [
      row('set', 'price', ['between $100 and $200']),
      row('add', 'color', ['red', 'blue']),
      row('clear', 'color'),
    ];
    expect(previewState(history, rows, schema)).toEqual({
      price: ['between $100 and $200'],
    });
  });

  it('drops a slot emptied by remove', () => {
    const rows = [row('remove', 'price', ['less than $50'])];
    expect(previewState(history, rows, schema)).toEqual({});
  });

  it('deduplicates under normalization', () => {
    const rows = [row('add', 'color', ['red', 'RED '])];
    expect(previewState({}, rows, schema)).toEqual({ color: ['red'] });
  });
});

describe('rowsToGain', () => {
  it('strips empty values and clears carry none', () => {
    expect(rowsToGain([row('add', 'color', ['red', ' ']), row('clear', 'price', [])])).toEqual([
      { op: 'add', slot: 'color', values: ['red'] },
      { op: 'clear', slot: 'price', values: [] },
    ]);
  });
});
