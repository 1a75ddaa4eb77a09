export type CandidateStatus = "pending" | "kept" | "rejected";

export type DecisionAction = "keep" | "reject";

/** One row of a subset listing, exactly as the review service serves it.
 * Only `status` is ever touched locally, and only optimistically. */
export interface CandidateView {
  candidate_id: string;
  image_id: string;
  image_url: string;
  question: string;
  answer: string;
  gt_label: string;
  status: CandidateStatus;
}

export interface CandidatePage {
  subset: string;
  total: number;
  offset: number;
  limit: number;
  candidates: CandidateView[];
}

export interface SubsetCounts {
  total: number;
  kept: number;
  rejected: number;
  pending: number;
}

export type ProgressMap = Record<string, SubsetCounts>;

export interface DecisionAck {
  candidate_id: string;
  status: CandidateStatus;
  changed: boolean;
}

export interface FinalizeRequest {
  n_per_subset: number;
  n_positive: number;
  seed: number;
}

export interface FinalizeResult {
  path: string;
  count: number;
}

export interface InsufficientPoolBody {
  error: "insufficient_pool";
  subset: string;
  have: number;
  need: number;
}

export const POSITIVE_SUBSET = "positive";

export const NEGATIVE_SUBSETS = ["category", "attribute", "relation"] as const;

/** Kept count a subset must reach before finalize can draw from it. */
export function subsetTarget(subset: string, req: FinalizeRequest): number {
  if (subset === POSITIVE_SUBSET) return req.n_positive;
  if ((NEGATIVE_SUBSETS as readonly string[]).includes(subset)) return req.n_per_subset;
  return 0;
}
