import type { MapperInfo, MapResponse, MappedMesh, Topology, ZeroShotResponse } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.error === "string") return body.error;
  } catch {
    /* non-JSON error body */
  }
  return `request failed with status ${response.status}`;
}

/** Thin typed client over the mapper service endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl.replace(/\/$/, "")}${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.url(path));
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    return (await response.json()) as T;
  }

  listMappers(): Promise<MapperInfo[]> {
    return this.getJson<MapperInfo[]>("/api/mappers");
  }

  topology(mapperId: string): Promise<Topology> {
    return this.getJson<Topology>(`/api/mappers/${mapperId}/topology`);
  }

  async map(mapperId: string, scores: number[], includeFaces = false): Promise<MapResponse> {
    const response = await this.fetchFn(this.url(`/api/mappers/${mapperId}/map`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ scores, include_faces: includeFaces }),
    });
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    return (await response.json()) as MapResponse;
  }

  /** Binary transport: uint32 vertex count, 10 float32 coefficients, then
   * nVertices * 3 float32 positions, all little-endian. */
  async mapBuffer(mapperId: string, scores: number[]): Promise<MappedMesh> {
    const response = await this.fetchFn(this.url(`/api/mappers/${mapperId}/map_buffer`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ scores }),
    });
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    const raw = await response.arrayBuffer();
    return decodeMapBuffer(raw);
  }

  async zeroShot(mapperId: string, file: Blob, filename: string): Promise<ZeroShotResponse> {
    const form = new FormData();
    form.append("image", file, filename);
    const response = await this.fetchFn(this.url(`/api/mappers/${mapperId}/zero_shot`), {
      method: "POST",
      body: form,
    });
    if (!response.ok) throw new ApiError(response.status, await errorMessage(response));
    return (await response.json()) as ZeroShotResponse;
  }
}

export function decodeMapBuffer(raw: ArrayBuffer): MappedMesh {
  if (raw.byteLength < 44) throw new Error(`map buffer too short: ${raw.byteLength} bytes`);
  const view = new DataView(raw);
  const nVertices = view.getUint32(0, true);
  const expected = 4 + 40 + nVertices * 12;
  if (raw.byteLength !== expected) {
    throw new Error(`map buffer holds ${raw.byteLength} bytes, expected ${expected}`);
  }
  const xi = new Float32Array(10);
  for (let i = 0; i < 10; i++) xi[i] = view.getFloat32(4 + 4 * i, true);
  const vertices = new Float32Array(nVertices * 3);
  for (let i = 0; i < vertices.length; i++) {
    vertices[i] = view.getFloat32(44 + 4 * i, true);
  }
  return { xi, vertices, nVertices };
}
