/** Typed client for the annotation service REST API. */

export type Polarity = "positive" | "negative";

export interface PromptView {
  index: number;
  polarity: Polarity;
  row: number;
  col: number;
  label?: string;
}

export interface SessionDoc {
  id: string;
  model: string;
  template: string;
  targets: string[];
  revision: number;
  prompts: PromptView[];
  enrichment: { levels: number; directions: number } | null;
}

export interface MatchDoc {
  source: [number, number];
  target: [number, number];
  similarity: number;
  polarity: Polarity;
  label?: string;
  prompt_index: number;
}

export interface CorrespondenceDoc {
  revision: number;
  matches: MatchDoc[];
}

export interface MaskDoc {
  revision: number;
  score: number;
  prompts: MatchDoc[];
  candidates: number;
  mask_png_base64: string;
}

export interface CreateSessionRequest {
  model: string;
  template: string;
  targets: string[];
  prompts?: { positive?: [number, number][]; negative?: [number, number][] };
  enrichment?: { levels: number; directions: number };
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

async function parseError(resp: Response): Promise<never> {
  let code = "unknown_error";
  let detail = resp.statusText;
  try {
    const doc = await resp.json();
    code = doc.error ?? code;
    detail = doc.detail ?? detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(resp.status, code, detail);
}

export class AnnotationClient {
  constructor(readonly baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      await parseError(resp);
    }
    return (await resp.json()) as T;
  }

  createSession(body: CreateSessionRequest): Promise<SessionDoc> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getSession(sessionId: string): Promise<SessionDoc> {
    return this.request(`/sessions/${sessionId}`);
  }

  addPrompt(
    sessionId: string,
    prompt: { row: number; col: number; polarity: Polarity; label?: string },
  ): Promise<{ index: number; revision: number }> {
    return this.request(`/sessions/${sessionId}/prompts`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(prompt),
    });
  }

  removePrompt(sessionId: string, index: number): Promise<{ revision: number }> {
    return this.request(`/sessions/${sessionId}/prompts/${index}`, { method: "DELETE" });
  }

  listTargets(sessionId: string): Promise<{ targets: string[]; revision: number }> {
    return this.request(`/sessions/${sessionId}/targets`);
  }

  getCorrespondence(sessionId: string, targetId: string): Promise<CorrespondenceDoc> {
    return this.request(`/sessions/${sessionId}/targets/${targetId}/correspondence`);
  }

  getMask(sessionId: string, targetId: string): Promise<MaskDoc> {
    return this.request(`/sessions/${sessionId}/targets/${targetId}/mask`);
  }

  /** Heatmap PNG URL; revision busts stale browser caches. */
  heatmapUrl(sessionId: string, targetId: string, promptIndex: number, revision: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/targets/${targetId}/heatmap` +
      `?prompt=${promptIndex}&rev=${revision}`;
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/images/${imageId}`;
  }
}
