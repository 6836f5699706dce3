/** Typed client for the session service HTTP API. */
import type { CreateSessionResponse, SessionStatus, SubmitResponse } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      detail = body.detail ?? detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  async health(): Promise<{ status: string }> {
    return expectJson(await this.fetchFn(`${this.baseUrl}/healthz`));
  }

  async createSessionFromDataset(datasetPath: string, numObjects: number): Promise<CreateSessionResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ dataset_path: datasetPath, num_objects: numObjects }),
    });
    return expectJson(response);
  }

  async createSessionFromFiles(files: Blob[], numObjects: number): Promise<CreateSessionResponse> {
    const form = new FormData();
    files.forEach((file, i) => form.append("frames", file, `${String(i).padStart(5, "0")}.png`));
    form.append("num_objects", String(numObjects));
    const response = await this.fetchFn(`${this.baseUrl}/sessions`, { method: "POST", body: form });
    return expectJson(response);
  }

  async status(sessionId: string): Promise<SessionStatus> {
    return expectJson(await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`));
  }

  async submitScribbles(sessionId: string, payload: string): Promise<SubmitResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/scribbles`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: payload,
    });
    return expectJson(response);
  }

  frameUrl(sessionId: string, frame: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/frames/${frame}.png`;
  }

  maskUrl(sessionId: string, round: number, frame: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/rounds/${round}/frames/${frame}/mask.png`;
  }

  async fetchMaskBytes(sessionId: string, round: number, frame: number): Promise<Uint8Array> {
    const response = await this.fetchFn(this.maskUrl(sessionId, round, frame));
    if (!response.ok) throw new ApiError(response.status, `mask ${round}/${frame} unavailable`);
    return new Uint8Array(await response.arrayBuffer());
  }
}
