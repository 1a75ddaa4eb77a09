import type {
  CandidatePage,
  CandidateView,
  DecisionAck,
  DecisionAction,
  FinalizeRequest,
  FinalizeResult,
  ProgressMap,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly body: unknown = undefined,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The slice of a fetch Response the client relies on; lets tests swap in
 * an in-memory service without the full Response machinery. */
export interface HttpResponse {
  ok: boolean;
  status: number;
  statusText: string;
  json(): Promise<unknown>;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<HttpResponse>;

export function describeError(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

/** Thin client for the review service. Every method maps to one endpoint. */
export class ReviewClient {
  readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    // wrap so the global fetch is never invoked with `this` rebound
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  imageUrl(candidate: CandidateView): string {
    return this.baseUrl + candidate.image_url;
  }

  async subsets(): Promise<string[]> {
    return this.request<string[]>("GET", "/subsets");
  }

  async candidates(subset: string, offset = 0, limit = 50): Promise<CandidatePage> {
    const query = `?offset=${offset}&limit=${limit}`;
    return this.request<CandidatePage>(
      "GET",
      `/subsets/${encodeURIComponent(subset)}/candidates${query}`,
    );
  }

  async decide(
    candidateId: string,
    action: DecisionAction,
    reviewer = "",
  ): Promise<DecisionAck> {
    return this.request<DecisionAck>("POST", "/decisions", {
      candidate_id: candidateId,
      action,
      reviewer,
    });
  }

  async progress(): Promise<ProgressMap> {
    return this.request<ProgressMap>("GET", "/progress");
  }

  async finalize(req: FinalizeRequest): Promise<FinalizeResult> {
    return this.request<FinalizeResult>("POST", "/finalize", req);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchFn(this.baseUrl + path, init);
    const payload = await res.json().catch(() => undefined);
    if (!res.ok) {
      const detail =
        payload && typeof payload === "object" && "error" in payload
          ? String((payload as { error: unknown }).error)
          : res.statusText || `status ${res.status}`;
      throw new ApiError(`${method} ${path}: ${detail}`, res.status, payload);
    }
    return payload as T;
  }
}

/** Service base URL: `?api=` query parameter first, then an injected
 * global, then same-origin relative paths. */
export function resolveBaseUrl(loc?: { search: string }): string {
  const search = loc?.search ?? (typeof location === "undefined" ? "" : location.search);
  const fromQuery = new URLSearchParams(search).get("api");
  if (fromQuery) return fromQuery.replace(/\/+$/, "");
  const injected = (globalThis as { __REVIEW_API__?: string }).__REVIEW_API__;
  if (injected) return injected.replace(/\/+$/, "");
  return "";
}
