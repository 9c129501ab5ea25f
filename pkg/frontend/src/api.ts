/** Thin fetch wrappers over the annotation service HTTP API. */

import type {
  GainOpJson,
  Schema,
  StatsPayload,
  SubmitResponse,
  TaskPayload,
} from './types.js';

export interface ApiClient {
  getSchema(): Promise<Schema>;
  leaseNext(annotatorId: string): Promise<TaskPayload | null>;
  submit(
    taskId: string,
    annotatorId: string,
    gain: GainOpJson[],
    clientStartedAt: number,
  ): Promise<SubmitResponse>;
  getStats(annotatorId?: string): Promise<StatsPayload>;
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(detail, response.status);
  }
  return (await response.json()) as T;
}

export function createApiClient(baseUrl = ''): ApiClient {
  return {
    async getSchema() {
      return parseOrThrow<Schema>(await fetch(`${baseUrl}/api/schema`));
    },

    async leaseNext(annotatorId) {
      const response = await fetch(`${baseUrl}/api/tasks/lease`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ annotator_id: annotatorId }),
      });
      const payload = await parseOrThrow<{ task: TaskPayload | null }>(response);
      return payload.task;
    },

    async submit(taskId, annotatorId, gain, clientStartedAt) {
      const response = await fetch(`${baseUrl}/api/tasks/${taskId}/submit`, {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({
          annotator_id: annotatorId,
          state_gain: gain,
          client_started_at: clientStartedAt,
        }),
      });
      return parseOrThrow<SubmitResponse>(response);
    },

    async getStats(annotatorId) {
      const query = annotatorId ? `?annotator_id=${encodeURIComponent(annotatorId)}` : '';
      return parseOrThrow<StatsPayload>(await fetch(`${baseUrl}/api/stats${query}`));
    },
  };
}
