/**
 * Stroke capture and rasterization.
 *
 * Pointer samples are decimated to a sparse polyline in normalized
 * coordinates; the rasterizer mirrors the server's (denormalize, join with
 * line segments, dilate by the brush radius) so the client preview and the
 * round-trip check agree with what the service draws.
 */
import type { RawSample, Scribble, Sign } from "./types.js";

export const MIN_SAMPLE_DIST_PX = 2;
export const BRUSH_RADIUS_PX = 2;

const clamp01 = (v: number) => Math.min(1, Math.max(0, v));

/** Distance-threshold decimation that always keeps both endpoints. */
export function simplifySamples(samples: RawSample[], minDistPx = MIN_SAMPLE_DIST_PX): RawSample[] {
  if (samples.length === 0) return [];
  const kept: RawSample[] = [samples[0]];
  for (const s of samples.slice(1)) {
    const last = kept[kept.length - 1];
    if (Math.hypot(s.x - last.x, s.y - last.y) >= minDistPx) {
      kept.push(s);
    }
  }
  const tail = samples[samples.length - 1];
  const last = kept[kept.length - 1];
  if (tail !== last && (tail.x !== last.x || tail.y !== last.y)) {
    kept.push(tail);
  }
  return kept;
}

/**
 * Turn raw pointer samples into a scribble, or null for a tap.
 * Coordinates are clamped into [0,1] so strokes leaving the canvas stay valid.
 */
export function captureStroke(
  samples: RawSample[],
  canvasW: number,
  canvasH: number,
  objectId: number,
  sign: Sign,
  minDistPx = MIN_SAMPLE_DIST_PX,
): Scribble | null {
  const simplified = simplifySamples(samples, minDistPx);
  if (simplified.length < 2) return null;
  let pathLength = 0;
  for (let i = 1; i < simplified.length; i++) {
    pathLength += Math.hypot(
      simplified[i].x - simplified[i - 1].x,
      simplified[i].y - simplified[i - 1].y,
    );
  }
  if (pathLength < minDistPx) return null; // a tap, not a stroke
  const raw: [number, number][] = simplified.map((s) => [
    clamp01(s.x / canvasW),
    clamp01(s.y / canvasH),
  ]);
  return { object_id: objectId, sign, points: subdividePolyline(raw) };
}

export const MAX_POINT_SPACING = 0.05;

/** Insert midpoints so consecutive normalized points stay a connected stroke. */
export function subdividePolyline(
  points: [number, number][],
  maxSpacing = MAX_POINT_SPACING,
): [number, number][] {
  if (points.length === 0) return [];
  const out: [number, number][] = [points[0]];
  for (let i = 1; i < points.length; i++) {
    const [x0, y0] = points[i - 1];
    const [x1, y1] = points[i];
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const pieces = Math.max(1, Math.ceil(dist / maxSpacing));
    for (let k = 1; k <= pieces; k++) {
      out.push([x0 + ((x1 - x0) * k) / pieces, y0 + ((y1 - y0) * k) / pieces]);
    }
  }
  return out;
}

export function serializeScribbles(frame: number, scribbles: Scribble[]): string {
  return JSON.stringify({ frame, scribbles });
}

export function parseScribbles(json: string): { frame: number; scribbles: Scribble[] } {
  const obj = JSON.parse(json);
  return { frame: obj.frame, scribbles: obj.scribbles ?? [] };
}

const denorm = (v: number, size: number) =>
  Math.min(size - 1, Math.max(0, Math.round(v * size - 0.5)));

function drawSegment(canvas: Uint8Array, w: number, r0: number, c0: number, r1: number, c1: number) {
  const steps = Math.max(Math.abs(r1 - r0), Math.abs(c1 - c0)) + 1;
  for (let i = 0; i < steps; i++) {
    const f = steps === 1 ? 0 : i / (steps - 1);
    const r = Math.round(r0 + f * (r1 - r0));
    const c = Math.round(c0 + f * (c1 - c0));
    canvas[r * w + c] = 1;
  }
}

function dilate(canvas: Uint8Array, h: number, w: number, radius: number): Uint8Array {
  if (radius <= 0) return canvas;
  const out = new Uint8Array(h * w);
  const offsets: [number, number][] = [];
  for (let dy = -radius; dy <= radius; dy++) {
    for (let dx = -radius; dx <= radius; dx++) {
      if (dy * dy + dx * dx <= radius * radius) offsets.push([dy, dx]);
    }
  }
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      if (!canvas[r * w + c]) continue;
      for (const [dy, dx] of offsets) {
        const rr = r + dy;
        const cc = c + dx;
        if (rr >= 0 && rr < h && cc >= 0 && cc < w) out[rr * w + cc] = 1;
      }
    }
  }
  return out;
}

/** Server-equivalent rasterization of one polyline onto an h x w grid. */
export function rasterizePolyline(
  points: [number, number][],
  h: number,
  w: number,
  brushRadiusPx = BRUSH_RADIUS_PX,
): Uint8Array {
  const canvas = new Uint8Array(h * w);
  const pix = points.map(([x, y]) => [denorm(y, h), denorm(x, w)] as [number, number]);
  for (let i = 0; i + 1 < pix.length; i++) {
    drawSegment(canvas, w, pix[i][0], pix[i][1], pix[i + 1][0], pix[i + 1][1]);
  }
  if (pix.length === 1) {
    canvas[pix[0][0] * w + pix[0][1]] = 1;
  }
  return dilate(canvas, h, w, brushRadiusPx);
}

/** Chebyshev distance between two rasterized maps (Infinity if one is empty). */
export function maxPixelDeviation(a: Uint8Array, b: Uint8Array, h: number, w: number): number {
  const coords = (m: Uint8Array) => {
    const out: [number, number][] = [];
    for (let r = 0; r < h; r++) {
      for (let c = 0; c < w; c++) if (m[r * w + c]) out.push([r, c]);
    }
    return out;
  };
  const pa = coords(a);
  const pb = coords(b);
  if (pa.length === 0 || pb.length === 0) {
    return pa.length === pb.length ? 0 : Infinity;
  }
  const oneWay = (src: [number, number][], dst: [number, number][]) => {
    let worst = 0;
    for (const [r, c] of src) {
      let best = Infinity;
      for (const [r2, c2] of dst) {
        best = Math.min(best, Math.max(Math.abs(r - r2), Math.abs(c - c2)));
      }
      worst = Math.max(worst, best);
    }
    return worst;
  };
  return Math.max(oneWay(pa, pb), oneWay(pb, pa));
}
