// Shared types for the annotation client. The wire format mirrors the
// server's /api/v1 endpoints exactly.

export const STAGES = ["F0", "F1", "F2", "F3", "F4"] as const;
export type Stage = (typeof STAGES)[number];

export function isStage(value: string): value is Stage {
  return (STAGES as readonly string[]).includes(value);
}

export interface ImageRef {
  modality: string;
  sample_id: string;
  url: string;
}

export interface ServerQuery {
  query_id: string;
  iteration: number;
  images: ImageRef[];
  answered: boolean;
}

export interface StatusPayload {
  iteration: number;
  d: number;
  pending_count: number;
  last_metrics: { accuracy: number; macro_auc: number; n_labeled: number } | null;
  finished: boolean;
}

export type SubmissionState = "pending" | "submitted" | "acknowledged";

export interface QueryView {
  queryId: string;
  iteration: number;
  images: ImageRef[];
  state: SubmissionState;
  error?: string;
}
