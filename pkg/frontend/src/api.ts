import type { ServerQuery, Stage, StatusPayload } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the annotation service endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly token: string | null = null,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!response.ok) {
      throw new ApiError(response.status, `GET ${path} failed (${response.status})`);
    }
    return (await response.json()) as T;
  }

  async getQueries(): Promise<ServerQuery[]> {
    const payload = await this.getJson<{ queries: ServerQuery[] }>("/api/v1/queries");
    return payload.queries;
  }

  async getStatus(): Promise<StatusPayload> {
    return this.getJson<StatusPayload>("/api/v1/status");
  }

  async submitLabel(queryId: string, stage: Stage): Promise<void> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token !== null) {
      headers["X-Annotation-Token"] = this.token;
    }
    const response = await this.fetchFn(`${this.baseUrl}/api/v1/labels`, {
      method: "POST",
      headers,
      body: JSON.stringify({ query_id: queryId, stage }),
    });
    if (!response.ok) {
      let message = `submission failed (${response.status})`;
      try {
        const body = (await response.json()) as { error?: string };
        if (body.error) message = body.error;
      } catch {
        // keep the generic message when the body is not JSON
      }
      throw new ApiError(response.status, message);
    }
  }
}
