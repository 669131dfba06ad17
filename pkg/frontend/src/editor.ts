/** Pure editor state: mask grid, brush strokes, undo/redo, request machine.
 *
 * All mutations return new state objects; the grid is copied on write so a
 * history entry is always an exact snapshot. The synthesis request lives in a
 * tiny phase machine (idle -> pending -> done | error) with at most one
 * in-flight request per result panel.
 */

import { ClassIndex } from "./palette.js";
import { EditorApi, SynthesisRequestBody, SynthesisResponse } from "./api.js";
import { base64ToBytes, bytesToBase64, decodeMaskPng, encodeIndexedPng } from "./png.js";

export const HISTORY_LIMIT = 50;

export interface Brush {
  classIndex: ClassIndex;
  radius: number; // pixels, mask coordinates
}

export interface StrokePoint {
  x: number;
  y: number;
}

export type RequestPhase = "idle" | "pending" | "done" | "error";

export interface SynthesisResult {
  image: string;          // base64 PNG
  predictedMask: string;  // base64 indexed PNG
  timingMs: number;
  seed: number;
}

export interface EditorState {
  sourceId: string | null;
  sourceImage: string | null; // base64 PNG as served
  width: number;
  height: number;
  grid: Uint8Array;
  originalGrid: Uint8Array;
  brush: Brush;
  domain: 0 | 1;
  mode: "latent" | "reference";
  referenceImage: string | null;
  seed: number;
  history: Uint8Array[];
  future: Uint8Array[];
  phase: RequestPhase;
  error: string | null;
  result: SynthesisResult | null;
}

export function emptyState(): EditorState {
  return {
    sourceId: null,
    sourceImage: null,
    width: 0,
    height: 0,
    grid: new Uint8Array(0),
    originalGrid: new Uint8Array(0),
    brush: { classIndex: 4, radius: 2 },
    domain: 0,
    mode: "latent",
    referenceImage: null,
    seed: 0,
    history: [],
    future: [],
    phase: "idle",
    error: null,
    result: null,
  };
}

/** Load a bundled sample (image + its mask) into a fresh editor state. */
export async function initEditor(api: EditorApi, sampleId: string): Promise<EditorState> {
  const detail = await api.sample(sampleId);
  const { width, height, grid } = await decodeMaskPng(base64ToBytes(detail.mask));
  return {
    ...emptyState(),
    sourceId: detail.id,
    sourceImage: detail.image,
    width,
    height,
    grid,
    originalGrid: grid.slice(),
    domain: detail.gender === 1 ? 1 : 0,
  };
}

/** Seed an editor from an uploaded image: the mask comes from /api/segment. */
export async function initEditorFromUpload(api: EditorApi, imageB64: string): Promise<EditorState> {
  const mask = await api.segment(imageB64);
  const { width, height, grid } = await decodeMaskPng(base64ToBytes(mask));
  return {
    ...emptyState(),
    sourceId: "upload",
    sourceImage: imageB64,
    width,
    height,
    grid,
    originalGrid: grid.slice(),
  };
}

// ---------------------------------------------------------------------------
// painting

function segmentDistance(px: number, py: number,
                         ax: number, ay: number, bx: number, by: number): number {
  const dx = bx - ax;
  const dy = by - ay;
  const lengthSq = dx * dx + dy * dy;
  let t = 0;
  if (lengthSq > 0) {
    t = Math.max(0, Math.min(1, ((px - ax) * dx + (py - ay) * dy) / lengthSq));
  }
  const cx = ax + t * dx;
  const cy = ay + t * dy;
  return Math.hypot(px - cx, py - cy);
}

/** Rasterize a round-brush stroke: every pixel within `radius` of the polyline.
 *  A zero-length path paints a single disc. */
export function rasterizeStroke(grid: Uint8Array, width: number, height: number,
                                path: StrokePoint[], brush: Brush): Uint8Array {
  const out = grid.slice();
  if (path.length === 0) {
    return out;
  }
  const segments: Array<[StrokePoint, StrokePoint]> = [];
  if (path.length === 1) {
    segments.push([path[0], path[0]]);
  } else {
    for (let i = 0; i + 1 < path.length; i++) {
      segments.push([path[i], path[i + 1]]);
    }
  }
  const r = brush.radius;
  for (const [a, b] of segments) {
    const minX = Math.max(0, Math.floor(Math.min(a.x, b.x) - r));
    const maxX = Math.min(width - 1, Math.ceil(Math.max(a.x, b.x) + r));
    const minY = Math.max(0, Math.floor(Math.min(a.y, b.y) - r));
    const maxY = Math.min(height - 1, Math.ceil(Math.max(a.y, b.y) + r));
    for (let y = minY; y <= maxY; y++) {
      for (let x = minX; x <= maxX; x++) {
        if (segmentDistance(x, y, a.x, a.y, b.x, b.y) <= r) {
          out[y * width + x] = brush.classIndex;
        }
      }
    }
  }
  return out;
}

/** Apply one stroke; pushes exactly one undo entry and clears the redo stack. */
export function paintStroke(state: EditorState, path: StrokePoint[],
                            brush?: Brush): EditorState {
  const active = brush ?? state.brush;
  const next = rasterizeStroke(state.grid, state.width, state.height, path, active);
  const history = [...state.history, state.grid].slice(-HISTORY_LIMIT);
  return { ...state, grid: next, history, future: [] };
}

export function undo(state: EditorState): EditorState {
  if (state.history.length === 0) {
    return state;
  }
  const previous = state.history[state.history.length - 1];
  return {
    ...state,
    grid: previous,
    history: state.history.slice(0, -1),
    future: [state.grid, ...state.future],
  };
}

export function redo(state: EditorState): EditorState {
  if (state.future.length === 0) {
    return state;
  }
  const [next, ...rest] = state.future;
  return {
    ...state,
    grid: next,
    history: [...state.history, state.grid].slice(-HISTORY_LIMIT),
    future: rest,
  };
}

export function resetMask(state: EditorState): EditorState {
  return paintStrokeless(state, state.originalGrid.slice());
}

function paintStrokeless(state: EditorState, grid: Uint8Array): EditorState {
  const history = [...state.history, state.grid].slice(-HISTORY_LIMIT);
  return { ...state, grid, history, future: [] };
}

// ---------------------------------------------------------------------------
// synthesis requests

export function buildRequest(state: EditorState): SynthesisRequestBody {
  if (!state.sourceImage) {
    throw new Error("no source selected");
  }
  if (state.mode === "reference" && !state.referenceImage) {
    throw new Error("reference mode needs a reference image");
  }
  const body: SynthesisRequestBody = {
    source: state.sourceImage,
    mode: state.mode,
    domain: state.domain,
    seed: state.seed,
    mask: bytesToBase64(encodeIndexedPng(state.grid, state.width, state.height)),
  };
  if (state.mode === "reference" && state.referenceImage) {
    body.reference = state.referenceImage;
  }
  return body;
}

/** Start a synthesis request. Rejects overlapping requests: callers must keep
 *  the returned pending state before awaiting the promise. */
export function beginSynthesis(state: EditorState): EditorState {
  if (state.phase === "pending") {
    throw new Error("a synthesis request is already pending");
  }
  return { ...state, phase: "pending", error: null };
}

export function completeSynthesis(state: EditorState,
                                  response: SynthesisResponse): EditorState {
  return {
    ...state,
    phase: "done",
    result: {
      image: response.image,
      predictedMask: response.predicted_mask,
      timingMs: response.timing_ms,
      seed: state.seed,
    },
  };
}

export function failSynthesis(state: EditorState, message: string): EditorState {
  return { ...state, phase: "error", error: message };
}

/** Bump the seed for "resample style". */
export function resampleSeed(state: EditorState): EditorState {
  return { ...state, seed: state.seed + 1 };
}

/** Full round trip: guard, POST, settle. Returns the settled state. */
export async function requestSynthesis(api: EditorApi, state: EditorState,
                                       onPending?: (s: EditorState) => void):
    Promise<EditorState> {
  const pending = beginSynthesis(state);
  onPending?.(pending);
  try {
    const response = await api.synthesize(buildRequest(pending));
    return completeSynthesis(pending, response);
  } catch (error) {
    return failSynthesis(pending, error instanceof Error ? error.message : String(error));
  }
}
