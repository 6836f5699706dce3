/**
 * Browser entry point: canvas, toolbar, frame timeline, round selector.
 *
 * The browser stays a thin client: every mask pixel comes from the service;
 * drawing only collects pointer samples and previews them.
 */
import { ApiClient } from "./api.js";
import { compositeOverlay, objectColor, objectPalette } from "./palette.js";
import { captureStroke, rasterizePolyline, BRUSH_RADIUS_PX } from "./strokes.js";
import {
  UiState,
  addStroke,
  annotatedRoundsForFrame,
  canSubmit,
  initialState,
  refreshUntilIdle,
  sessionStarted,
  showRound,
  submitRound,
  switchFrame,
  switchObject,
  switchSign,
} from "./state.js";
import type { RawSample } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let state: UiState = initialState();
let api = new ApiClient("");
let samples: RawSample[] = [];
let drawing = false;

const canvas = $<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;
const frameCache = new Map<string, ImageData>();
const labelCache = new Map<string, Uint8Array>();

const reversePalette = new Map<number, number>();
objectPalette().forEach(([r, g, b], i) => reversePalette.set((r << 16) | (g << 8) | b, i));

async function loadImageData(url: string): Promise<ImageData> {
  const img = new Image();
  img.crossOrigin = "anonymous";
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
  const off = document.createElement("canvas");
  off.width = img.naturalWidth;
  off.height = img.naturalHeight;
  const octx = off.getContext("2d")!;
  octx.drawImage(img, 0, 0);
  return octx.getImageData(0, 0, off.width, off.height);
}

async function fetchFrame(frame: number): Promise<ImageData> {
  const key = `${state.sessionId}/${frame}`;
  if (!frameCache.has(key)) {
    frameCache.set(key, await loadImageData(api.frameUrl(state.sessionId!, frame)));
  }
  return frameCache.get(key)!;
}

async function fetchLabels(round: number, frame: number, w: number, h: number): Promise<Uint8Array> {
  const key = `${state.sessionId}/${round}/${frame}`;
  if (!labelCache.has(key)) {
    const rgba = await loadImageData(api.maskUrl(state.sessionId!, round, frame));
    const labels = new Uint8Array(w * h);
    for (let i = 0; i < w * h; i++) {
      const color = (rgba.data[i * 4] << 16) | (rgba.data[i * 4 + 1] << 8) | rgba.data[i * 4 + 2];
      labels[i] = reversePalette.get(color) ?? 0;
    }
    labelCache.set(key, labels);
  }
  return labelCache.get(key)!;
}

function drawPendingPreview(w: number, h: number, composed: Uint8ClampedArray): void {
  for (const stroke of state.pending) {
    const raster = rasterizePolyline(stroke.points, h, w, BRUSH_RADIUS_PX);
    const [r, g, b] = stroke.sign === "pos" ? objectColor(stroke.object_id) : [230, 60, 60];
    for (let i = 0; i < raster.length; i++) {
      if (!raster[i]) continue;
      composed[i * 4] = r;
      composed[i * 4 + 1] = g;
      composed[i * 4 + 2] = b;
    }
  }
}

async function render(): Promise<void> {
  if (!state.sessionId) return;
  const frame = await fetchFrame(state.currentFrame);
  canvas.width = frame.width;
  canvas.height = frame.height;
  let composed: Uint8ClampedArray;
  try {
    const labels = await fetchLabels(state.displayedRound, state.currentFrame, frame.width, frame.height);
    composed = compositeOverlay(frame.data, labels, frame.width, frame.height, state.overlayOpacity);
  } catch {
    composed = new Uint8ClampedArray(frame.data);
    setNote("mask unavailable for this round/frame, showing raw frame");
  }
  drawPendingPreview(frame.width, frame.height, composed);
  const imageData = ctx.createImageData(frame.width, frame.height);
  imageData.data.set(composed);
  ctx.putImageData(imageData, 0, 0);
  syncControls();
}

function setNote(text: string): void {
  $("note").textContent = text;
}

function syncControls(): void {
  $<HTMLInputElement>("frame-slider").max = String(Math.max(0, state.numFrames - 1));
  $<HTMLInputElement>("frame-slider").value = String(state.currentFrame);
  $("frame-label").textContent = `frame ${state.currentFrame + 1}/${state.numFrames}`;
  $<HTMLInputElement>("round-slider").max = String(state.serverRound);
  $<HTMLInputElement>("round-slider").value = String(state.displayedRound);
  $("round-label").textContent = `round ${state.displayedRound}/${state.serverRound}`;
  $<HTMLButtonElement>("submit").disabled = !canSubmit(state);
  $("status").textContent = state.busy ? "running round..." : state.error ?? "ready";
  const badges = annotatedRoundsForFrame(state, state.currentFrame);
  $("badges").textContent = badges.length
    ? `annotated in round${badges.length > 1 ? "s" : ""} ${badges.join(", ")}`
    : "";
  const objects = $("objects");
  objects.innerHTML = "";
  for (let oid = 1; oid <= state.numObjects; oid++) {
    const btn = document.createElement("button");
    const [r, g, b] = objectColor(oid);
    btn.textContent = `obj ${oid}`;
    btn.style.borderColor = `rgb(${r},${g},${b})`;
    btn.className = oid === state.currentObject ? "active" : "";
    btn.onclick = () => {
      state = switchObject(state, oid);
      void render();
    };
    objects.appendChild(btn);
  }
}

function canvasPoint(event: PointerEvent): RawSample {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * canvas.width,
    y: ((event.clientY - rect.top) / rect.height) * canvas.height,
    t: event.timeStamp,
  };
}

function wireCanvas(): void {
  canvas.addEventListener("pointerdown", (e) => {
    if (!state.sessionId || state.busy) return;
    drawing = true;
    samples = [canvasPoint(e)];
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (drawing) samples.push(canvasPoint(e));
  });
  const finish = () => {
    if (!drawing) return;
    drawing = false;
    const stroke = captureStroke(samples, canvas.width, canvas.height, state.currentObject, state.brushSign);
    state = addStroke(state, stroke);
    samples = [];
    void render();
  };
  canvas.addEventListener("pointerup", finish);
  canvas.addEventListener("pointercancel", finish);
}

function wireControls(): void {
  $<HTMLInputElement>("frame-slider").addEventListener("input", (e) => {
    state = switchFrame(state, Number((e.target as HTMLInputElement).value));
    void render();
  });
  $<HTMLInputElement>("round-slider").addEventListener("input", (e) => {
    state = showRound(state, Number((e.target as HTMLInputElement).value));
    void render();
  });
  $<HTMLInputElement>("opacity").addEventListener("input", (e) => {
    state = { ...state, overlayOpacity: Number((e.target as HTMLInputElement).value) / 100 };
    void render();
  });
  $<HTMLInputElement>("sign-pos").addEventListener("change", () => {
    state = switchSign(state, "pos");
  });
  $<HTMLInputElement>("sign-neg").addEventListener("change", () => {
    state = switchSign(state, "neg");
  });
  $<HTMLButtonElement>("submit").addEventListener("click", async () => {
    state = await submitRound(state, api);
    if (state.busy) {
      state = await refreshUntilIdle(state, api, (ms) => new Promise((r) => setTimeout(r, ms)));
    }
    labelCache.clear();
    await render();
  });
  $<HTMLButtonElement>("connect").addEventListener("click", async () => {
    api = new ApiClient($<HTMLInputElement>("base-url").value.replace(/\/$/, ""));
    const datasetPath = $<HTMLInputElement>("dataset-path").value;
    const numObjects = Number($<HTMLInputElement>("num-objects").value) || 1;
    try {
      const created = await api.createSessionFromDataset(datasetPath, numObjects);
      state = sessionStarted(state, created.session_id, created.num_frames, created.num_objects);
      frameCache.clear();
      labelCache.clear();
      setNote(`session ${created.session_id} created`);
      await render();
    } catch (err) {
      setNote(err instanceof Error ? err.message : String(err));
    }
  });
}

wireCanvas();
wireControls();
setNote("connect to a running ivseg service to begin");
