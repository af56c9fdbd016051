import { ApiClient, ApiError } from "./api.js";
import { SliderState, type SeedResult } from "./state.js";
import type { MapperInfo } from "./types.js";

export interface MeshSink {
  /** Replace the viewport geometry; vertices are interleaved xyz. */
  showMesh(vertices: Float32Array, nVertices: number): void;
}

export interface ControllerOptions {
  debounceMs?: number;
  /** Non-blocking error surface (toast); never throws into the UI. */
  onToast?: (message: string) => void;
  /** Called when the zero-shot feature flips between enabled/disabled. */
  onZeroShotAvailability?: (enabled: boolean, reason: string) => void;
}

/**
 * Owns request flow between the sliders and the service: trailing-edge
 * debounce (at most one /map request per debounce window), monotonic
 * sequence numbers so a stale response never replaces a newer mesh, and
 * zero-shot uploads that seed the sliders through the inverse affine map.
 */
export class ViewerController {
  private state: SliderState | null = null;
  private mapperId: string | null = null;
  private debounceHandle: ReturnType<typeof setTimeout> | null = null;
  private requestSeq = 0;
  private appliedSeq = 0;
  private useBinary = true;
  readonly debounceMs: number;
  private readonly toast: (message: string) => void;
  private readonly zeroShotAvailability: (enabled: boolean, reason: string) => void;

  constructor(
    private readonly api: ApiClient,
    private readonly sink: MeshSink,
    options: ControllerOptions = {},
  ) {
    this.debounceMs = options.debounceMs ?? 120;
    this.toast = options.onToast ?? (() => {});
    this.zeroShotAvailability = options.onZeroShotAvailability ?? (() => {});
  }

  get sliderState(): SliderState {
    if (!this.state) throw new Error("no mapper selected");
    return this.state;
  }

  get currentMapperId(): string | null {
    return this.mapperId;
  }

  /** Bind to a mapper and render its default (training-mean) mesh. */
  async selectMapper(info: MapperInfo): Promise<void> {
    this.cancelPending();
    this.state = new SliderState(info.descriptors);
    this.mapperId = info.mapper_id;
    this.requestSeq = 0;
    this.appliedSeq = 0;
    await this.flush();
  }

  /** Slider moved: update state and schedule a single debounced request. */
  onSliderChange(index: number, uiValue: number): void {
    this.sliderState.setUiValue(index, uiValue);
    this.scheduleFlush();
  }

  resetSlider(index: number): void {
    this.sliderState.resetSlider(index);
    this.scheduleFlush();
  }

  resetAll(): void {
    this.sliderState.resetAll();
    this.scheduleFlush();
  }

  private scheduleFlush(): void {
    if (this.debounceHandle !== null) clearTimeout(this.debounceHandle);
    this.debounceHandle = setTimeout(() => {
      this.debounceHandle = null;
      void this.flush();
    }, this.debounceMs);
  }

  private cancelPending(): void {
    if (this.debounceHandle !== null) {
      clearTimeout(this.debounceHandle);
      this.debounceHandle = null;
    }
  }

  /** Issue the /map request for the full current score vector. */
  async flush(): Promise<void> {
    const state = this.sliderState;
    const mapperId = this.mapperId!;
    const seq = ++this.requestSeq;
    const scores = state.fullScores(); // always exactly the mapper's width
    try {
      let vertices: Float32Array;
      let nVertices: number;
      let xi: number[];
      if (this.useBinary) {
        try {
          const mesh = await this.api.mapBuffer(mapperId, scores);
          vertices = mesh.vertices;
          nVertices = mesh.nVertices;
          xi = Array.from(mesh.xi);
        } catch (error) {
          if (error instanceof ApiError && (error.status === 404 || error.status === 405)) {
            this.useBinary = false; // endpoint not offered; fall back to JSON
            const response = await this.api.map(mapperId, scores);
            ({ vertices, nVertices } = flattenVertices(response.mesh.vertices));
            xi = response.xi;
          } else {
            throw error;
          }
        }
      } else {
        const response = await this.api.map(mapperId, scores);
        ({ vertices, nVertices } = flattenVertices(response.mesh.vertices));
        xi = response.xi;
      }
      if (seq <= this.appliedSeq) return; // stale: a newer response already rendered
      this.appliedSeq = seq;
      state.lastXi = xi;
      state.dirty = false;
      this.sink.showMesh(vertices, nVertices);
    } catch (error) {
      // sliders stay editable; surface the failure without blocking
      this.toast(error instanceof Error ? error.message : String(error));
    }
  }

  /**
   * Zero-shot upload: the returned scores seed the sliders (inverse affine,
   * clamped, with out-of-range badges) and the predicted mesh replaces the
   * viewport so manual fine-tuning starts from the prediction.
   */
  async onImageUpload(file: Blob, filename: string): Promise<SeedResult | null> {
    const state = this.sliderState;
    const mapperId = this.mapperId!;
    const seq = ++this.requestSeq;
    try {
      const response = await this.api.zeroShot(mapperId, file, filename);
      const seeded = state.seedFromScores(response.scores);
      if (seq > this.appliedSeq) {
        this.appliedSeq = seq;
        state.lastXi = response.xi;
        const { vertices, nVertices } = flattenVertices(response.mesh.vertices);
        this.sink.showMesh(vertices, nVertices);
      }
      this.zeroShotAvailability(true, "");
      return seeded;
    } catch (error) {
      if (error instanceof ApiError && error.status === 503) {
        this.zeroShotAvailability(false, "no scorer backend is configured on the service");
      }
      this.toast(error instanceof Error ? error.message : String(error));
      return null;
    }
  }
}

export function flattenVertices(rows: number[][]): {
  vertices: Float32Array;
  nVertices: number;
} {
  const flat = new Float32Array(rows.length * 3);
  rows.forEach((row, i) => {
    flat[3 * i] = row[0];
    flat[3 * i + 1] = row[1];
    flat[3 * i + 2] = row[2];
  });
  return { vertices: flat, nVertices: rows.length };
}
