/**
 * UI state and the transitions around drawing and submitting a round.
 *
 * Pending strokes always belong to the current frame; moving to another
 * frame discards them (the server takes one annotated frame per round).
 * Completed rounds are read-only: switching the displayed round only
 * changes which masks are fetched.
 */
import type { ApiClient } from "./api.js";
import type { Scribble, Sign } from "./types.js";
import { serializeScribbles } from "./strokes.js";

export interface UiState {
  sessionId: string | null;
  numFrames: number;
  numObjects: number;
  currentFrame: number;
  currentObject: number;
  brushSign: Sign;
  pending: Scribble[];
  displayedRound: number;
  serverRound: number;
  overlayOpacity: number;
  busy: boolean;
  error: string | null;
  history: [number, number][];
}

export function initialState(): UiState {
  return {
    sessionId: null,
    numFrames: 0,
    numObjects: 1,
    currentFrame: 0,
    currentObject: 1,
    brushSign: "pos",
    pending: [],
    displayedRound: 0,
    serverRound: 0,
    overlayOpacity: 0.5,
    busy: false,
    error: null,
    history: [],
  };
}

export function sessionStarted(state: UiState, sessionId: string, numFrames: number, numObjects: number): UiState {
  return {
    ...initialState(),
    sessionId,
    numFrames,
    numObjects,
    overlayOpacity: state.overlayOpacity,
  };
}

export function addStroke(state: UiState, stroke: Scribble | null): UiState {
  if (stroke === null) {
    return { ...state, error: "stroke too short, draw a longer line" };
  }
  return { ...state, pending: [...state.pending, stroke], error: null };
}

export function switchFrame(state: UiState, frame: number): UiState {
  const clamped = Math.min(state.numFrames - 1, Math.max(0, frame));
  if (clamped === state.currentFrame) return state;
  const warning = state.pending.length > 0 ? "pending strokes discarded on frame change" : null;
  return { ...state, currentFrame: clamped, pending: [], error: warning };
}

export function switchObject(state: UiState, objectId: number): UiState {
  const clamped = Math.min(state.numObjects, Math.max(1, objectId));
  return { ...state, currentObject: clamped };
}

export function switchSign(state: UiState, sign: Sign): UiState {
  return { ...state, brushSign: sign };
}

export function showRound(state: UiState, round: number): UiState {
  const clamped = Math.min(state.serverRound, Math.max(0, round));
  return { ...state, displayedRound: clamped };
}

export function canSubmit(state: UiState): boolean {
  return state.sessionId !== null && state.pending.length > 0 && !state.busy;
}

export function annotatedRoundsForFrame(state: UiState, frame: number): number[] {
  return state.history.filter(([, f]) => f === frame).map(([r]) => r);
}

/**
 * Submit the pending strokes as one round. On success the displayed round
 * advances to the new round; on failure the pending strokes are preserved.
 */
export async function submitRound(state: UiState, api: ApiClient): Promise<UiState> {
  if (!canSubmit(state) || state.sessionId === null) {
    return { ...state, error: state.busy ? "a round is already running" : "nothing to submit" };
  }
  const payload = serializeScribbles(state.currentFrame, state.pending);
  const inFlight = { ...state, busy: true, error: null };
  try {
    const result = await api.submitScribbles(state.sessionId, payload);
    const status = await api.status(state.sessionId);
    return {
      ...inFlight,
      busy: status.state === "running_round",
      pending: [],
      serverRound: status.round >= result.round ? status.round : result.round,
      displayedRound: status.round >= result.round ? status.round : result.round,
      history: status.annotation_history,
    };
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    return { ...inFlight, busy: false, error: message };
  }
}

/** Poll status until an async round settles back to idle. */
export async function refreshUntilIdle(
  state: UiState,
  api: ApiClient,
  sleep: (ms: number) => Promise<void>,
  maxPolls = 600,
): Promise<UiState> {
  if (state.sessionId === null) return state;
  let current = state;
  for (let i = 0; i < maxPolls; i++) {
    const status = await api.status(state.sessionId);
    current = {
      ...current,
      busy: status.state === "running_round",
      serverRound: status.round,
      displayedRound: Math.max(current.displayedRound, status.round),
      history: status.annotation_history,
      error: status.error,
    };
    if (status.state !== "running_round") return current;
    await sleep(250);
  }
  return current;
}
