/** Shared payload shapes mirroring the annotation service's JSON API. */

export interface SlotDef {
  name: string;
  description: string;
  multi_valued: boolean;
  allow_free_values: boolean;
  schema_values: string[];
}

export interface Schema {
  domain_name: string;
  version: string;
  slots: SlotDef[];
}

/** Preference state: slot name -> value list. */
export type StateJson = Record<string, string[]>;

export type OpKind = 'add' | 'remove' | 'set' | 'clear';

export interface GainOpJson {
  op: OpKind;
  slot: string;
  values: string[];
}

export interface RecordPayload {
  record_id: string;
  source_dialogue_id: string | null;
  turn_index: number | null;
  history_preference: StateJson;
  system_utterance: string;
  user_utterance: string;
  state_gain: GainOpJson[] | null;
  preference_extraction: StateJson | null;
}

export interface LeasePayload {
  annotator_id: string;
  leased_at: number;
  expires_at: number;
}

export interface TaskPayload {
  task_id: string;
  dataset_id: string;
  status: 'open' | 'leased' | 'done';
  prefilled: boolean;
  lease: LeasePayload | null;
  record: RecordPayload;
}

export interface Violation {
  code: string;
  message: string;
  op_index: number | null;
  slot: string;
  value: string | null;
}

export interface SubmitResponse {
  accepted: boolean;
  derived_extraction: StateJson | null;
  violations: Violation[];
}

export interface StatsSummary {
  completed: number;
  total_seconds: number;
  mean_seconds: number;
}

export interface StatsPayload {
  per_annotator: ({ annotator_id: string } & StatsSummary)[];
  overall: StatsSummary;
}

/** One editor row of the gain being annotated. */
export interface GainRow {
  op: OpKind;
  slot: string;
  values: string[];
  /** True when the row came from a machine-prefilled suggestion. */
  suggested: boolean;
}

export interface RowFlag {
  valid: boolean;
  reasons: string[];
}
