import type { DescriptorRange } from "./types.js";

const clamp01 = (t: number) => Math.min(1, Math.max(0, t));

export interface SeedResult {
  /** Per descriptor: true when the server score fell outside [lo, hi] and
   * the slider was clamped (shown as an out-of-range badge). */
  clamped: boolean[];
}

/**
 * Slider state for one mapper. Each slider holds a UI fraction in [0, 1];
 * the score sent to the service is the affine map lo + t * (hi - lo), so a
 * stored fraction always yields a score inside the descriptor's training
 * range.
 */
export class SliderState {
  readonly descriptors: DescriptorRange[];
  private uiValues: number[];
  private badges: boolean[];
  dirty = false;
  lastXi: number[] | null = null;

  constructor(descriptors: DescriptorRange[]) {
    for (const d of descriptors) {
      if (!(d.lo < d.hi)) throw new Error(`descriptor ${d.id}: lo must be < hi`);
    }
    this.descriptors = descriptors;
    this.uiValues = descriptors.map((d) => this.fractionOf(d, d.default));
    this.badges = descriptors.map(() => false);
  }

  get width(): number {
    return this.descriptors.length;
  }

  private fractionOf(d: DescriptorRange, score: number): number {
    return clamp01((score - d.lo) / (d.hi - d.lo));
  }

  uiValue(index: number): number {
    return this.uiValues[index];
  }

  scoreOf(index: number): number {
    const d = this.descriptors[index];
    return d.lo + this.uiValues[index] * (d.hi - d.lo);
  }

  /** The full score vector, always exactly the mapper's width. */
  fullScores(): number[] {
    return this.descriptors.map((_, i) => this.scoreOf(i));
  }

  setUiValue(index: number, value: number): void {
    if (index < 0 || index >= this.width) throw new Error(`no slider ${index}`);
    this.uiValues[index] = clamp01(value);
    this.badges[index] = false;
    this.dirty = true;
  }

  hasBadge(index: number): boolean {
    return this.badges[index];
  }

  /** Seed sliders from server scores (the inverse affine map, clamped). */
  seedFromScores(scores: number[]): SeedResult {
    if (scores.length !== this.width) {
      throw new Error(`expected ${this.width} scores, got ${scores.length}`);
    }
    const clamped = scores.map((score, i) => {
      const d = this.descriptors[i];
      this.uiValues[i] = this.fractionOf(d, score);
      return score < d.lo || score > d.hi;
    });
    this.badges = [...clamped];
    this.dirty = false;
    return { clamped };
  }

  resetSlider(index: number): void {
    const d = this.descriptors[index];
    this.setUiValue(index, this.fractionOf(d, d.default));
  }

  resetAll(): void {
    this.descriptors.forEach((_, i) => this.resetSlider(i));
  }
}
