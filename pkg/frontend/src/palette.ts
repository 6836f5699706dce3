/**
 * Object colors and overlay compositing.
 *
 * The palette reproduces the indexed-PNG colormap the service writes, so an
 * object keeps one color on disk, over the wire and on screen.
 */

export function objectPalette(n = 256): [number, number, number][] {
  const palette: [number, number, number][] = [];
  for (let i = 0; i < n; i++) {
    let r = 0;
    let g = 0;
    let b = 0;
    let c = i;
    for (let j = 0; j < 8; j++) {
      r |= ((c >> 0) & 1) << (7 - j);
      g |= ((c >> 1) & 1) << (7 - j);
      b |= ((c >> 2) & 1) << (7 - j);
      c >>= 3;
    }
    palette.push([r, g, b]);
  }
  return palette;
}

const PALETTE = objectPalette();

export function objectColor(objectId: number): [number, number, number] {
  return PALETTE[objectId % PALETTE.length];
}

/**
 * Blend per-object colors over a frame. `frame` is RGBA, `labels` one byte
 * per pixel (0 = background, untouched). Returns a new RGBA buffer.
 */
export function compositeOverlay(
  frame: Uint8ClampedArray,
  labels: Uint8Array,
  width: number,
  height: number,
  opacity: number,
): Uint8ClampedArray {
  if (frame.length !== width * height * 4) {
    throw new Error(`frame buffer is ${frame.length} bytes, expected ${width * height * 4}`);
  }
  if (labels.length !== width * height) {
    throw new Error(`label buffer is ${labels.length} bytes, expected ${width * height}`);
  }
  const out = new Uint8ClampedArray(frame);
  const a = Math.min(1, Math.max(0, opacity));
  if (a === 0) return out;
  for (let i = 0; i < labels.length; i++) {
    const label = labels[i];
    if (label === 0) continue;
    const [r, g, b] = PALETTE[label % PALETTE.length];
    const o = i * 4;
    out[o] = (1 - a) * frame[o] + a * r;
    out[o + 1] = (1 - a) * frame[o + 1] + a * g;
    out[o + 2] = (1 - a) * frame[o + 2] + a * b;
  }
  return out;
}
