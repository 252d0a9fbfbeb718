/** Thin fetch client for the model service. All state lives server-side. */

import { ModelUpdateRequest } from "./payload.js";
import {
  ModelListing,
  StudyDocument,
  WireEnvelope,
  WireFinding,
  WorklistEntry,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private userId: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  setUser(userId: string): void {
    this.userId = userId;
  }

  user(): string {
    return this.userId;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, {
        method,
        headers: {
          "Content-Type": "application/json",
          "X-User-Id": this.userId,
        },
        ...(body !== undefined ? { body: JSON.stringify(body) } : {}),
      });
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    const text = await response.text();
    if (!response.ok) {
      let message = text;
      try {
        const parsed = JSON.parse(text) as { error?: string };
        message = parsed.error ?? text;
      } catch {
        // keep the raw body
      }
      throw new ApiError(response.status, message);
    }
    return JSON.parse(text) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/health");
  }

  listModels(): Promise<WireEnvelope<ModelListing>> {
    return this.request("GET", "/bounding-box");
  }

  /** Inference; uses the POST alias so browsers do not need GET bodies. */
  infer(image: string, width: number, height: number, model: string): Promise<WireEnvelope<WireFinding>> {
    return this.request("POST", "/bounding-box", { image, model, width, height });
  }

  submitCorrection(payload: ModelUpdateRequest): Promise<WireEnvelope<{ model: string; modelVersion: string }>> {
    return this.request("POST", "/model-update", payload);
  }

  worklist(): Promise<WireEnvelope<WorklistEntry>> {
    return this.request("GET", "/worklist");
  }

  study(studyId: string): Promise<WireEnvelope<StudyDocument>> {
    return this.request("GET", `/studies/${encodeURIComponent(studyId)}`);
  }

  markRead(studyId: string): Promise<WireEnvelope<WorklistEntry>> {
    return this.request("POST", `/worklist/${encodeURIComponent(studyId)}/read`);
  }
}
