/** Typed client for the annotation service. Every mutation round-trips
 * through here; the UI keeps no mask state of its own. */

export interface SessionInfo {
  session_id: string;
  width: number;
  height: number;
}

export interface SessionListEntry extends SessionInfo {
  image: string;
}

export interface RoadColor {
  h: number;
  s: number;
  v: number;
}

export interface FillResult {
  instance_id: number;
  pixel_count: number;
  bounds: [number, number, number, number];
}

export interface StrokeResult {
  instance_id: number;
  pixel_count: number;
}

export interface BoxRow {
  id: number;
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
}

export type StrokeKind = "line" | "freehand";

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
      detail = body.error ?? body.detail ?? detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, String(detail));
  }
  return response.json() as Promise<T>;
}

export function parseBoxesJsonl(text: string): BoxRow[] {
  return text
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
    .map((line) => JSON.parse(line) as BoxRow);
}

export class AnnotationApi {
  constructor(private base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async listImages(): Promise<string[]> {
    const body = await expectJson<{ images: string[] }>(await fetch(this.url("/images")));
    return body.images;
  }

  async listSessions(): Promise<SessionListEntry[]> {
    const body = await expectJson<{ sessions: SessionListEntry[] }>(
      await fetch(this.url("/sessions")),
    );
    return body.sessions;
  }

  async createSession(image: string): Promise<SessionInfo> {
    return expectJson(
      await fetch(this.url("/sessions"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ image }),
      }),
    );
  }

  imageUrl(sessionId: string): string {
    return this.url(`/sessions/${sessionId}/image`);
  }

  maskUrl(sessionId: string, format: "palette" | "ids" = "palette"): string {
    const suffix = format === "ids" ? "?format=ids" : "";
    return this.url(`/sessions/${sessionId}/mask${suffix}`);
  }

  boxesUrl(sessionId: string): string {
    return this.url(`/sessions/${sessionId}/boxes`);
  }

  async setRoadColor(sessionId: string, x: number, y: number): Promise<RoadColor> {
    return expectJson(
      await fetch(this.url(`/sessions/${sessionId}/road-color`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ x, y }),
      }),
    );
  }

  async floodFill(sessionId: string, x: number, y: number): Promise<FillResult> {
    return expectJson(
      await fetch(this.url(`/sessions/${sessionId}/floodfill`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ x, y }),
      }),
    );
  }

  async stroke(
    sessionId: string,
    kind: StrokeKind,
    points: Array<[number, number]>,
    radius: number,
  ): Promise<StrokeResult> {
    return expectJson(
      await fetch(this.url(`/sessions/${sessionId}/stroke`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ kind, points, radius }),
      }),
    );
  }

  async undo(sessionId: string): Promise<boolean> {
    const body = await expectJson<{ reverted: boolean }>(
      await fetch(this.url(`/sessions/${sessionId}/undo`), { method: "POST" }),
    );
    return body.reverted;
  }

  async eraseInstance(sessionId: string, instanceId: number): Promise<number> {
    const body = await expectJson<{ cleared: number }>(
      await fetch(this.url(`/sessions/${sessionId}/instances/${instanceId}`), {
        method: "DELETE",
      }),
    );
    return body.cleared;
  }

  async boxes(sessionId: string): Promise<BoxRow[]> {
    const response = await fetch(this.boxesUrl(sessionId));
    if (!response.ok) {
      throw new ApiError(response.status, response.statusText);
    }
    return parseBoxesJsonl(await response.text());
  }

  async setConfig(
    sessionId: string,
    values: { fill_tolerance?: number; road_margin?: number },
  ): Promise<{ fill_tolerance: number; road_margin: number }> {
    return expectJson(
      await fetch(this.url(`/sessions/${sessionId}/config`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(values),
      }),
    );
  }

  async fetchMaskBytes(sessionId: string, format: "palette" | "ids"): Promise<Uint8Array> {
    const response = await fetch(this.maskUrl(sessionId, format));
    if (!response.ok) {
      throw new ApiError(response.status, response.statusText);
    }
    return new Uint8Array(await response.arrayBuffer());
  }
}
