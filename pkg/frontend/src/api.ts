// Typed client for the tryonlab session service HTTP API.

export interface GarmentEntry {
  index: number;
  label: number;
}

export interface TweakJson {
  kind: string;
  magnitude: number;
  target_garment: number;
  payload?: Record<string, unknown>;
}

export interface SessionSummary {
  id: string;
  created: string;
  updated: string;
  garments: GarmentEntry[];
  tweaks: TweakJson[];
  dirty: boolean;
  checkpoint: string;
}

export interface DirectionInfo {
  id: string;
  attribute: string;
  fit_accuracy: number;
}

export interface RenderResult {
  bytes: Uint8Array;
  checkpoint: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public field?: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, "network_error", `server unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let code = "http_error";
      let message = `${response.status}`;
      let field: string | undefined;
      try {
        const body = (await response.json()) as Record<string, unknown>;
        code = String(body.code ?? code);
        message = String(body.message ?? message);
        if (body.field) field = String(body.field);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, code, message, field);
    }
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.request(path, init);
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createSession(body: Record<string, unknown>): Promise<SessionSummary> {
    return this.post("/sessions", body);
  }

  getSession(id: string): Promise<SessionSummary> {
    return this.json(`/sessions/${id}`);
  }

  addGarment(id: string, garment: Record<string, unknown>): Promise<SessionSummary> {
    return this.post(`/sessions/${id}/garments`, garment);
  }

  reorder(id: string, permutation: number[]): Promise<SessionSummary> {
    return this.post(`/sessions/${id}/reorder`, { permutation });
  }

  addTweak(id: string, tweak: TweakJson): Promise<SessionSummary> {
    return this.post(`/sessions/${id}/tweaks`, tweak);
  }

  async undoTweak(id: string): Promise<SessionSummary> {
    return this.json(`/sessions/${id}/tweaks/last`, { method: "DELETE" });
  }

  async render(id: string): Promise<RenderResult> {
    const response = await this.request(`/sessions/${id}/render`);
    const bytes = new Uint8Array(await response.arrayBuffer());
    return { bytes, checkpoint: response.headers.get("X-Model-Checkpoint") ?? "" };
  }

  async directions(): Promise<DirectionInfo[]> {
    const body = await this.json<{ directions: DirectionInfo[] }>("/directions");
    return body.directions;
  }

  async health(): Promise<{ status: string; checkpoint: string | null }> {
    return this.json("/healthz");
  }
}
