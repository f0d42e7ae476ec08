import type { CatalogPage, Job, JobRequest } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

/** Thin typed client over the generation service's JSON API. */
export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ServiceError(`service unreachable: ${String(err)}`, 0);
    }
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ServiceError(detail, resp.status);
    }
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/api/health");
  }

  listParts(slot?: number, page = 0, pageSize = 100): Promise<CatalogPage> {
    const params = new URLSearchParams({ page: String(page), page_size: String(pageSize) });
    if (slot !== undefined) params.set("slot", String(slot));
    return this.request(`/api/parts?${params}`);
  }

  submitJob(request: JobRequest): Promise<Job> {
    return this.request("/api/jobs", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
  }

  getJob(id: string): Promise<Job> {
    return this.request(`/api/jobs/${id}`);
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${imageId}`;
  }
}
