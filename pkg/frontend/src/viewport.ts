import type { MeshSink } from "./controller.js";

/**
 * Minimal software-projected mesh viewport on a 2D canvas: orthographic
 * projection with a fixed orbit, painter-sorted flat-shaded triangles. Good
 * for the ~10k-face meshes the service produces, with zero dependencies.
 */
export class CanvasViewport implements MeshSink {
  private faces: Uint32Array | null = null;
  private vertices: Float32Array | null = null;
  private nVertices = 0;
  private yaw = 0.5;
  private pitch = 0.15;
  private dragging = false;
  private lastX = 0;
  private lastY = 0;

  constructor(private readonly canvas: HTMLCanvasElement) {
    canvas.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointermove", (e) => {
      if (!this.dragging) return;
      this.yaw += (e.clientX - this.lastX) * 0.01;
      this.pitch += (e.clientY - this.lastY) * 0.01;
      this.pitch = Math.min(1.4, Math.max(-1.4, this.pitch));
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      this.redraw();
    });
    canvas.addEventListener("pointerup", () => {
      this.dragging = false;
    });
  }

  setTopology(faces: number[][]): void {
    const flat = new Uint32Array(faces.length * 3);
    faces.forEach((f, i) => {
      flat[3 * i] = f[0];
      flat[3 * i + 1] = f[1];
      flat[3 * i + 2] = f[2];
    });
    this.faces = flat;
  }

  showMesh(vertices: Float32Array, nVertices: number): void {
    this.vertices = vertices;
    this.nVertices = nVertices;
    this.redraw();
  }

  redraw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#10151c";
    ctx.fillRect(0, 0, width, height);
    if (!this.vertices || !this.faces || this.nVertices === 0) return;

    const v = this.vertices;
    const n = this.nVertices;
    // center + fit scale
    let cx = 0,
      cy = 0,
      cz = 0;
    for (let i = 0; i < n; i++) {
      cx += v[3 * i];
      cy += v[3 * i + 1];
      cz += v[3 * i + 2];
    }
    cx /= n;
    cy /= n;
    cz /= n;
    let radius = 1e-9;
    for (let i = 0; i < n; i++) {
      const dx = v[3 * i] - cx;
      const dy = v[3 * i + 1] - cy;
      const dz = v[3 * i + 2] - cz;
      radius = Math.max(radius, Math.hypot(dx, dy, dz));
    }
    const scale = (0.45 * Math.min(width, height)) / radius;

    const cosY = Math.cos(this.yaw),
      sinY = Math.sin(this.yaw);
    const cosP = Math.cos(this.pitch),
      sinP = Math.sin(this.pitch);
    const px = new Float32Array(n);
    const py = new Float32Array(n);
    const pz = new Float32Array(n);
    for (let i = 0; i < n; i++) {
      const x0 = v[3 * i] - cx;
      const y0 = v[3 * i + 1] - cy;
      const z0 = v[3 * i + 2] - cz;
      const x1 = cosY * x0 + sinY * z0;
      const z1 = -sinY * x0 + cosY * z0;
      const y2 = cosP * y0 - sinP * z1;
      const z2 = sinP * y0 + cosP * z1;
      px[i] = width / 2 + scale * x1;
      py[i] = height / 2 - scale * y2;
      pz[i] = z2;
    }

    const faces = this.faces;
    const nFaces = faces.length / 3;
    const order = new Array<number>(nFaces);
    const depth = new Float32Array(nFaces);
    for (let f = 0; f < nFaces; f++) {
      order[f] = f;
      depth[f] = pz[faces[3 * f]] + pz[faces[3 * f + 1]] + pz[faces[3 * f + 2]];
    }
    order.sort((a, b) => depth[a] - depth[b]); // back to front

    for (const f of order) {
      const a = faces[3 * f],
        b = faces[3 * f + 1],
        c = faces[3 * f + 2];
      const ux = px[b] - px[a],
        uy = py[b] - py[a];
      const wx = px[c] - px[a],
        wy = py[c] - py[a];
      const area2 = ux * wy - uy * wx; // screen-space normal z
      const facing = Math.min(1, Math.abs(area2) / 400);
      const tone = Math.round(90 + 130 * facing);
      ctx.fillStyle = `rgb(${tone},${Math.round(tone * 0.85)},${Math.round(tone * 0.72)})`;
      ctx.beginPath();
      ctx.moveTo(px[a], py[a]);
      ctx.lineTo(px[b], py[b]);
      ctx.lineTo(px[c], py[c]);
      ctx.closePath();
      ctx.fill();
    }
  }
}
