/** Shared wire and UI types. */

export type Sign = "pos" | "neg";

export interface Point {
  x: number; // normalized [0,1]
  y: number;
}

export interface Scribble {
  object_id: number;
  sign: Sign;
  points: [number, number][];
}

export interface ScribbleSetJson {
  frame: number;
  scribbles: Scribble[];
}

export interface SessionStatus {
  state: "idle" | "running_round" | "error";
  round: number;
  T: number;
  M: number;
  annotation_history: [number, number][]; // [round, frame]
  error: string | null;
}

export interface CreateSessionResponse {
  session_id: string;
  state: string;
  num_frames: number;
  num_objects: number;
}

export interface SubmitResponse {
  round: number;
  changed_frames: number[];
  state: string;
}

export interface RawSample {
  x: number; // canvas pixels
  y: number;
  t: number; // ms timestamp
}
