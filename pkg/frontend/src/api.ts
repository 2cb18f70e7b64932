/** Typed client for the planning service. Every number shown in the console
 * comes from these responses; nothing is computed locally. */

export interface Metrics {
  d90: number;
  v100: number;
  seed_count: number;
}

export interface DraftTrajectory {
  col: number;
  row: number;
  tilt_deg: number;
  depths: number[];
}

export interface SessionState {
  session_id: string;
  scenario: string;
  revision: number;
  spin_rate: number;
  edema_fraction: number;
  draft: {
    trajectories: DraftTrajectory[];
    seeds: { position: number[]; strength: number }[];
  };
  metrics: Metrics;
  prescription: number;
  bounds: { lo: number[]; hi: number[] };
  grid: { pitch: number; half_index: number };
  has_trial: boolean;
  state_hash: string;
  meshes?: {
    target: { vertices: number[][]; faces: number[][] } | null;
    arch: { vertices: number[][]; faces: number[][] } | null;
  };
}

export interface DoseSlice {
  axis: string;
  offset_mm: number;
  u_axis: string;
  v_axis: string;
  u_range: [number, number];
  v_range: [number, number];
  resolution: number;
  values: number[][];
  prescription: number;
  revision: number;
  target_contour: number[][][];
  arch_contour: number[][][];
}

export interface ServiceError {
  status: number;
  error: string;
  message: string;
}

export type Mutation =
  | { op: "add_seed"; col: number; row: number; tilt_deg?: number; depth: number }
  | { op: "delete_seed"; col: number; row: number; tilt_deg?: number; depth: number }
  | { op: "move_seed"; col: number; row: number; tilt_deg?: number; depth: number; to_depth?: number; to_col?: number; to_row?: number }
  | { op: "set_tilt"; col: number; row: number; tilt_deg?: number; new_tilt_deg: number }
  | { op: "set_spin"; spin_rate: number }
  | { op: "apply_edema"; fraction: number };

async function parseFailure(res: Response): Promise<ServiceError> {
  try {
    const body = await res.json();
    return { status: res.status, error: body.error ?? "HttpError", message: body.message ?? res.statusText };
  } catch {
    return { status: res.status, error: "HttpError", message: res.statusText };
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, init);
    if (!res.ok) {
      throw await parseFailure(res);
    }
    return (await res.json()) as T;
  }

  createSession(scenario: string): Promise<SessionState> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ scenario }),
    });
  }

  getState(sessionId: string, meshes = true): Promise<SessionState> {
    return this.request(`/sessions/${sessionId}/state?meshes=${meshes}`);
  }

  mutate(sessionId: string, revision: number, mutation: Mutation): Promise<SessionState> {
    return this.request(`/sessions/${sessionId}/mutate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ revision, ...mutation }),
    });
  }

  doseSlice(sessionId: string, axis: string, offsetMm: number, resolution = 64): Promise<DoseSlice> {
    const q = `axis=${axis}&offset_mm=${offsetMm}&resolution=${resolution}`;
    return this.request(`/sessions/${sessionId}/dose-slice?${q}`);
  }

  optimize(sessionId: string, revision: number, mode: string, seed = 0): Promise<SessionState> {
    return this.request(`/sessions/${sessionId}/optimize`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ revision, mode, seed }),
    });
  }

  /** POST the execute request and hand back the raw SSE body stream. */
  async execute(sessionId: string, revision: number): Promise<ReadableStream<Uint8Array>> {
    const res = await fetch(`${this.baseUrl}/sessions/${sessionId}/execute`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ revision }),
    });
    if (!res.ok || res.body === null) {
      throw await parseFailure(res);
    }
    return res.body;
  }

  export(sessionId: string): Promise<{ revision: number; state_hash: string; documents: Record<string, unknown> }> {
    return this.request(`/sessions/${sessionId}/export`);
  }

  scenarios(): Promise<{ scenarios: string[] }> {
    return this.request("/scenarios");
  }
}
