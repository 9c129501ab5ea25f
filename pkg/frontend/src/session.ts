/**
 * DOM-free annotation session controller: leases tasks, tracks editor rows,
 * computes the live preview, submits, and verifies the server's derived
 * state against the local preview (divergence = defect, surfaced loudly).
 */

import { previewState, rowsToGain, statesEqual, validateRows } from './apply.js';
import type { ApiClient } from './api.js';
import type {
  GainRow,
  OpKind,
  RowFlag,
  Schema,
  StateJson,
  StatsPayload,
  TaskPayload,
  Violation,
} from './types.js';

export type SessionPhase = 'loading' | 'annotating' | 'finished' | 'error';

export interface SessionView {
  phase: SessionPhase;
  task: TaskPayload | null;
  rows: GainRow[];
  flags: RowFlag[];
  preview: StateJson;
  canSubmit: boolean;
  violations: Violation[];
  defect: string | null;
  errorBanner: string | null;
  /** Seconds since the current task was rendered. */
  elapsedSeconds: number;
  completed: number;
  finalStats: StatsPayload | null;
}

export class AnnotationSession {
  private schema: Schema | null = null;
  private task: TaskPayload | null = null;
  private rows: GainRow[] = [];
  private phase: SessionPhase = 'loading';
  private violations: Violation[] = [];
  private defect: string | null = null;
  private errorBanner: string | null = null;
  private renderedAt = 0;
  private completed = 0;
  private finalStats: StatsPayload | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly annotatorId: string,
    private readonly now: () => number = () => Date.now(),
  ) {}

  /** Fetch the schema and lease the first task. */
  async start(): Promise<void> {
    try {
      this.schema = await this.api.getSchema();
    } catch (error) {
      this.phase = 'error';
      this.errorBanner = `schema fetch failed: ${String(error)}`;
      return;
    }
    await this.leaseNext();
  }

  async leaseNext(): Promise<void> {
    this.violations = [];
    try {
      this.task = await this.api.leaseNext(this.annotatorId);
    } catch (error) {
      this.phase = 'error';
      this.errorBanner = `lease failed: ${String(error)}`;
      return;
    }
    if (this.task === null) {
      this.phase = 'finished';
      try {
        this.finalStats = await this.api.getStats(this.annotatorId);
      } catch {
        this.finalStats = null;
      }
      return;
    }
    // Prefilled gains populate the editor as suggestions; the timer starts now.
    this.rows = (this.task.record.state_gain ?? []).map((op) => ({
      op: op.op,
      slot: op.slot,
      values: [...op.values],
      suggested: true,
    }));
    this.renderedAt = this.now();
    this.phase = 'annotating';
  }

  requireSchema(): Schema {
    if (!this.schema) throw new Error('session not started');
    return this.schema;
  }

  addRow(op: OpKind = 'add'): void {
    this.rows.push({ op, slot: '', values: [], suggested: false });
  }

  removeRow(index: number): void {
    this.rows.splice(index, 1);
    this.violations = [];
  }

  updateRow(index: number, patch: Partial<Pick<GainRow, 'op' | 'slot' | 'values'>>): void {
    const row = this.rows[index];
    if (!row) return;
    this.rows[index] = { ...row, ...patch, suggested: false };
    this.violations = [];
  }

  view(): SessionView {
    const history = this.task?.record.history_preference ?? {};
    const schema = this.schema;
    const flags =
      schema && this.phase === 'annotating' ? validateRows(history, this.rows, schema) : [];
    const preview =
      schema && this.phase === 'annotating' ? previewState(history, this.rows, schema) : {};
    return {
      phase: this.phase,
      task: this.task,
      rows: this.rows.map((r) => ({ ...r, values: [...r.values] })),
      flags,
      preview,
      canSubmit: this.phase === 'annotating' && flags.every((f) => f.valid),
      violations: this.violations,
      defect: this.defect,
      errorBanner: this.errorBanner,
      elapsedSeconds: this.renderedAt ? (this.now() - this.renderedAt) / 1000 : 0,
      completed: this.completed,
      finalStats: this.finalStats,
    };
  }

  /**
   * Submit the current rows. Invalid rows make this a no-op (submit must be
   * impossible); server rejections map violations back without losing the
   * draft; network failures keep the draft and raise the error banner.
   */
  async submit(): Promise<SessionView> {
    const current = this.view();
    if (!this.task || !current.canSubmit) return current;
    const expected = current.preview;
    let response;
    try {
      response = await this.api.submit(
        this.task.task_id,
        this.annotatorId,
        rowsToGain(this.rows),
        this.renderedAt / 1000,
      );
    } catch (error) {
      this.errorBanner = `submit failed, draft kept — retry when back online (${String(error)})`;
      return this.view();
    }
    this.errorBanner = null;
    if (!response.accepted) {
      this.violations = response.violations;
      return this.view();
    }
    if (!response.derived_extraction || !statesEqual(expected, response.derived_extraction)) {
      this.defect =
        'preview/server divergence: the client preview did not match the ' +
        'server-derived extraction; please report this task';
      console.error('derived-state divergence', {
        task: this.task.task_id,
        preview: expected,
        derived: response.derived_extraction,
      });
    }
    this.completed += 1;
    await this.leaseNext();
    return this.view();
  }

  /** Map server violations onto row indices (op_index first, slot fallback). */
  violationsForRow(index: number): Violation[] {
    const row = this.rows[index];
    return this.violations.filter((v) => {
      if (v.op_index !== null) return v.op_index === index;
      return row !== undefined && v.slot.trim().toLowerCase() === row.slot.trim().toLowerCase();
    });
  }
}
