import { describe, expect, it } from 'vitest';

import type { ApiClient } from '../src/api.js';
import { AnnotationSession } from '../src/session.js';
import type {
  GainOpJson,
  Schema,
  StatsPayload,
  SubmitResponse,
  TaskPayload,
} from '../src/types.js';

const schema: Schema = {
  domain_name: 'hotel',
  version: '1',
  slots: [
    {
      name: 'price',
      description: '',
      multi_valued: false,
      allow_free_values: false,
      schema_values: ['less than $50', 'between $100 and $200'],
    },
    {
      name: 'color',
      description: '',
      multi_valued: true,
      allow_free_values: false,
      schema_values: ['red', 'blue'],
    },
  ],
};

function task(id: string, history: Record<string, string[]>, prefill?: GainOpJson[]): TaskPayload {
  return {
    task_id: id,
    dataset_id: 'ds',
    status: 'leased',
    prefilled: Boolean(prefill),
    lease: { annotator_id: 'a', leased_at: 0, expires_at: 600 },
    record: {
      record_id: `rec-${id}`,
      source_dialogue_id: null,
      turn_index: null,
      history_preference: history,
      system_utterance: 'Anything else?',
      user_utterance: 'I like red.',
      state_gain: prefill ?? null,
      preference_extraction: null,
    },
  };
}

interface FakeApiOptions {
  tasks: TaskPayload[];
  derive?: (gain: GainOpJson[], history: Record<string, string[]>) => Record<string, string[]>;
  reject?: SubmitResponse;
  failSubmits?: number;
}

function fakeApi(options: FakeApiOptions): ApiClient & { submitted: GainOpJson[][] } {
  const queue = [...options.tasks];
  let current: TaskPayload | null = null;
  let failuresLeft = options.failSubmits ?? 0;
  const submitted: GainOpJson[][] = [];
  const stats: StatsPayload = {
    per_annotator: [{ annotator_id: 'a', completed: 0, total_seconds: 0, mean_seconds: 0 }],
    overall: { completed: 0, total_seconds: 0, mean_seconds: 0 },
  };
  return {
    submitted,
    async getSchema() {
      return schema;
    },
    async leaseNext() {
      current = queue.shift() ?? null;
      return current;
    },
    async submit(_taskId, _annotator, gain) {
      if (failuresLeft > 0) {
        failuresLeft -= 1;
        throw new Error('network down');
      }
      if (options.reject) return options.reject;
      submitted.push(gain);
      const history = current?.record.history_preference ?? {};
      const derive =
        options.derive ??
        ((g: GainOpJson[], h: Record<string, string[]>) => {
          const out: Record<string, string[]> = Object.fromEntries(
            Object.entries(h).map(([k, v]) => [k, [...v]]),
          );
          for (const op of g) {
            if (op.op === 'add' || op.op === 'set') out[op.slot] = [...op.values];
            if (op.op === 'remove' || op.op === 'clear') delete out[op.slot];
          }
          return out;
        });
      stats.overall.completed += 1;
      return { accepted: true, derived_extraction: derive(gain, history), violations: [] };
    },
    async getStats() {
      return stats;
    },
  };
}

describe('AnnotationSession', () => {
  it('renders history and starts annotating', async () => {
    const session = new AnnotationSession(fakeApi({ tasks: [task('t1', { price: ['less than $50'] })] }), 'a');
    await session.start();
    const view = session.view();
    expect(view.phase).toBe('annotating');
    expect(view.task?.record.history_preference).toEqual({ price: ['less than $50'] });
    expect(view.preview).toEqual({ price: ['less than $50'] });
  });

  it('prefilled gains populate suggestion rows and the preview', async () => {
    const prefill: GainOpJson[] = [{ op: 'add', slot: 'color', values: ['red'] }];
    const session = new AnnotationSession(
      fakeApi({ tasks: [task('t1', { price: ['less than $50'] }, prefill)] }),
      'a',
    );
    await session.start();
    const view = session.view();
    expect(view.rows).toHaveLength(1);
    expect(view.rows[0]?.suggested).toBe(true);
    expect(view.preview).toEqual({ price: ['less than $50'], color: ['red'] });
  });

  it('invalid rows block submit and nothing is sent', async () => {
    const api = fakeApi({ tasks: [task('t1', {})] });
    const session = new AnnotationSession(api, 'a');
    await session.start();
    session.addRow();
    session.updateRow(0, { op: 'remove', slot: 'color', values: ['red'] }); // absent slot
    const view = session.view();
    expect(view.canSubmit).toBe(false);
    await session.submit();
    expect(api.submitted).toHaveLength(0);
    expect(session.view().phase).toBe('annotating');
  });

  it('accepted submit advances to the next task', async () => {
    const api = fakeApi({ tasks: [task('t1', {}), task('t2', {})] });
    const session = new AnnotationSession(api, 'a');
    await session.start();
    session.addRow();
    session.updateRow(0, { op: 'add', slot: 'color', values: ['red'] });
    const view = await session.submit();
    expect(api.submitted).toHaveLength(1);
    expect(view.completed).toBe(1);
    expect(view.task?.task_id).toBe('t2');
    expect(view.defect).toBeNull();
  });

  it('ends with a completion view and session stats', async () => {
    const api = fakeApi({ tasks: [task('t1', {})] });
    const session = new AnnotationSession(api, 'a');
    await session.start();
    session.addRow();
    session.updateRow(0, { op: 'add', slot: 'color', values: ['blue'] });
    const view = await session.submit();
    expect(view.phase).toBe('finished');
    expect(view.finalStats?.overall.completed).toBe(1);
  });

  it('maps server violations onto rows and keeps the task', async () => {
    const reject: SubmitResponse = {
      accepted: false,
      derived_extraction: null,
      violations: [
        { code: 'remove_absent_value', message: 'nope', op_index: 0, slot: 'color', value: 'red' },
      ],
    };
    const api = fakeApi({ tasks: [task('t1', { color: ['blue'] })], reject });
    const session = new AnnotationSession(api, 'a');
    await session.start();
    session.addRow();
    session.updateRow(0, { op: 'remove', slot: 'color', values: ['blue'] });
    const view = await session.submit();
    expect(view.phase).toBe('annotating');
    expect(view.task?.task_id).toBe('t1');
    expect(session.violationsForRow(0)).toHaveLength(1);
  });

  it('raises the defect banner when server derivation diverges', async () => {
    const api = fakeApi({
      tasks: [task('t1', {})],
      derive: () => ({ color: ['blue'] }), // server "disagrees" with the preview
    });
    const session = new AnnotationSession(api, 'a');
    await session.start();
    session.addRow();
    session.updateRow(0, { op: 'add', slot: 'color', values: ['red'] });
    const view = await session.submit();
    expect(view.defect).toContain('divergence');
  });

  it('keeps the draft on network failure and offers retry', async () => {
    const api = fakeApi({ tasks: [task('t1', {}), task('t2', {})], failSubmits: 1 });
    const session = new AnnotationSession(api, 'a');
    await session.start();
    session.addRow();
    session.updateRow(0, { op: 'add', slot: 'color', values: ['red'] });
    let view = await session.submit();
    expect(view.errorBanner).toContain('draft kept');
    expect(view.rows).toHaveLength(1);
    expect(view.task?.task_id).toBe('t1');
    view = await session.submit(); // retry succeeds
    expect(view.task?.task_id).toBe('t2');
    expect(view.errorBanner).toBeNull();
  });

  it('schema fetch failure is a blocking error', async () => {
    const api = fakeApi({ tasks: [] });
    api.getSchema = async () => {
      throw new Error('502');
    };
    const session = new AnnotationSession(api, 'a');
    await session.start();
    const view = session.view();
    expect(view.phase).toBe('error');
    expect(view.errorBanner).toContain('schema fetch failed');
  });

  it('tracks elapsed time from task render', async () => {
    let nowValue = 10_000;
    const api = fakeApi({ tasks: [task('t1', {})] });
    const session = new AnnotationSession(api, 'a', () => nowValue);
    await session.start();
    nowValue += 45_000;
    expect(session.view().elapsedSeconds).toBeCloseTo(45);
  });
});
