/** DOM wiring for the mask editor. All generation happens server-side; this
 *  file only routes pixels and requests. */

import { EditorApi, SampleInfo } from "./api.js";
import {
  EditorState, StrokePoint, completeSynthesis, emptyState, failSynthesis,
  beginSynthesis, buildRequest, initEditor, initEditorFromUpload, paintStroke,
  rasterizeStroke, redo, resampleSeed, resetMask, undo,
} from "./editor.js";
import { CLASS_NAMES, ClassIndex, paletteCss } from "./palette.js";
import { base64ToBytes, decodeMaskPng, decodePng } from "./png.js";
import { composeOverlay, gridToRgba, imageToRgba } from "./render.js";

const SCALE = 6;

const api = new EditorApi("");
let state: EditorState = emptyState();
let sourceRgba: Uint8ClampedArray | null = null;
let strokePath: StrokePoint[] = [];
let painting = false;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvas = $("mask-canvas") as unknown as HTMLCanvasElement;
const resultImage = $("result-image") as unknown as HTMLImageElement;
const resultMask = $("result-mask") as unknown as HTMLCanvasElement;
const banner = $("error-banner");

function setState(next: EditorState): void {
  state = next;
  draw();
  syncControls();
}

function showError(message: string): void {
  banner.textContent = message;
  banner.style.display = "block";
}

function clearError(): void {
  banner.style.display = "none";
}

async function decodeSource(): Promise<void> {
  sourceRgba = null;
  if (state.sourceImage) {
    const img = await decodePng(base64ToBytes(state.sourceImage));
    sourceRgba = imageToRgba(img);
  }
}

function toImageData(pixels: Uint8ClampedArray, width: number, height: number): ImageData {
  return new ImageData(pixels as Uint8ClampedArray<ArrayBuffer>, width, height);
}

function draw(previewGrid?: Uint8Array): void {
  if (!state.width) return;
  const grid = previewGrid ?? state.grid;
  canvas.width = state.width * SCALE;
  canvas.height = state.height * SCALE;
  const ctx = canvas.getContext("2d")!;
  const base = sourceRgba ?? gridToRgba(grid, state.width, state.height);
  const composed = sourceRgba
    ? composeOverlay(base, grid, state.width, state.height)
    : base;
  const small = new OffscreenCanvas(state.width, state.height);
  const smallCtx = small.getContext("2d")!;
  smallCtx.putImageData(toImageData(composed, state.width, state.height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(small, 0, 0, canvas.width, canvas.height);
}

async function drawResult(): Promise<void> {
  if (!state.result) return;
  resultImage.src = `data:image/png;base64,${state.result.image}`;
  const { width, height, grid } = await decodeMaskPng(
    base64ToBytes(state.result.predictedMask));
  resultMask.width = width * SCALE;
  resultMask.height = height * SCALE;
  const ctx = resultMask.getContext("2d")!;
  const small = new OffscreenCanvas(width, height);
  small.getContext("2d")!.putImageData(
    toImageData(gridToRgba(grid, width, height), width, height), 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(small, 0, 0, resultMask.width, resultMask.height);
  $("result-meta").textContent =
    `seed ${state.result.seed} · ${state.result.timingMs.toFixed(0)} ms`;
}

function syncControls(): void {
  ($("undo-btn") as HTMLButtonElement).disabled = state.history.length === 0;
  ($("redo-btn") as HTMLButtonElement).disabled = state.future.length === 0;
  const busy = state.phase === "pending";
  ($("synthesize-btn") as HTMLButtonElement).disabled = busy || !state.sourceImage;
  ($("resample-btn") as HTMLButtonElement).disabled = busy || !state.sourceImage;
  $("seed-label").textContent = `seed ${state.seed}`;
  $("status").textContent = state.phase === "pending" ? "synthesizing…"
    : state.phase === "error" ? "error" : "";
  (document.querySelectorAll<HTMLButtonElement>(".class-btn")).forEach((btn) => {
    btn.classList.toggle("active", Number(btn.dataset.cls) === state.brush.classIndex);
  });
  ($("domain-toggle") as HTMLInputElement).checked = state.domain === 1;
  ($("mode-select") as HTMLSelectElement).value = state.mode;
}

function canvasPoint(event: PointerEvent): StrokePoint {
  const rect = canvas.getBoundingClientRect();
  return {
    x: (event.clientX - rect.left) / rect.width * state.width,
    y: (event.clientY - rect.top) / rect.height * state.height,
  };
}

function wireCanvas(): void {
  canvas.addEventListener("pointerdown", (event) => {
    if (!state.width) return;
    painting = true;
    canvas.setPointerCapture(event.pointerId);
    strokePath = [canvasPoint(event)];
    draw(rasterizeStroke(state.grid, state.width, state.height, strokePath, state.brush));
  });
  canvas.addEventListener("pointermove", (event) => {
    if (!painting) return;
    strokePath.push(canvasPoint(event));
    draw(rasterizeStroke(state.grid, state.width, state.height, strokePath, state.brush));
  });
  const finish = () => {
    if (!painting) return;
    painting = false;
    setState(paintStroke(state, strokePath));
    strokePath = [];
  };
  canvas.addEventListener("pointerup", finish);
  canvas.addEventListener("pointercancel", finish);
}

async function synthesize(): Promise<void> {
  clearError();
  let pending: EditorState;
  try {
    pending = beginSynthesis(state);
  } catch {
    return; // a request is already in flight
  }
  setState(pending);
  try {
    const response = await api.synthesize(buildRequest(pending));
    setState(completeSynthesis(pending, response));
    await drawResult();
  } catch (error) {
    const message = error instanceof Error ? error.message : String(error);
    setState(failSynthesis(pending, message));
    showError(message);
  }
}

async function selectSample(id: string): Promise<void> {
  clearError();
  try {
    setState(await initEditor(api, id));
    await decodeSource();
    draw();
  } catch (error) {
    showError(error instanceof Error ? error.message : String(error));
  }
}

function renderSampleList(samples: SampleInfo[]): void {
  const list = $("sample-list");
  list.innerHTML = "";
  const refSelect = $("reference-select") as HTMLSelectElement;
  refSelect.innerHTML = "<option value=''>reference…</option>";
  for (const sample of samples) {
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${sample.thumbnail}`;
    img.title = sample.id;
    img.className = "thumb";
    img.addEventListener("click", () => void selectSample(sample.id));
    list.appendChild(img);
    const option = document.createElement("option");
    option.value = sample.id;
    option.textContent = sample.id;
    refSelect.appendChild(option);
  }
}

function wireControls(): void {
  const classBar = $("class-bar");
  CLASS_NAMES.forEach((name, i) => {
    const btn = document.createElement("button");
    btn.className = "class-btn";
    btn.dataset.cls = String(i);
    btn.textContent = name;
    btn.style.borderColor = paletteCss(i as ClassIndex);
    btn.addEventListener("click", () => {
      setState({ ...state, brush: { ...state.brush, classIndex: i as ClassIndex } });
    });
    classBar.appendChild(btn);
  });
  ($("radius-input") as HTMLInputElement).addEventListener("input", (event) => {
    const radius = Number((event.target as HTMLInputElement).value);
    setState({ ...state, brush: { ...state.brush, radius } });
  });
  ($("domain-toggle") as HTMLInputElement).addEventListener("change", (event) => {
    setState({ ...state, domain: (event.target as HTMLInputElement).checked ? 1 : 0 });
  });
  ($("mode-select") as HTMLSelectElement).addEventListener("change", (event) => {
    const mode = (event.target as HTMLSelectElement).value as "latent" | "reference";
    setState({ ...state, mode });
  });
  ($("reference-select") as HTMLSelectElement).addEventListener("change", (event) => {
    const id = (event.target as HTMLSelectElement).value;
    if (!id) return;
    void api.sample(id).then((detail) => {
      setState({ ...state, referenceImage: detail.image, mode: "reference" });
    }).catch((error) => showError(String(error)));
  });
  $("undo-btn").addEventListener("click", () => setState(undo(state)));
  $("redo-btn").addEventListener("click", () => setState(redo(state)));
  $("reset-btn").addEventListener("click", () => setState(resetMask(state)));
  $("synthesize-btn").addEventListener("click", () => void synthesize());
  $("resample-btn").addEventListener("click", () => {
    setState(resampleSeed(state));
    void synthesize();
  });
  ($("upload-input") as HTMLInputElement).addEventListener("change", async (event) => {
    const file = (event.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    bytes.forEach((b) => { binary += String.fromCharCode(b); });
    try {
      setState(await initEditorFromUpload(api, btoa(binary)));
      await decodeSource();
      draw();
    } catch (error) {
      showError(error instanceof Error ? error.message : String(error));
    }
  });
}

async function boot(): Promise<void> {
  wireControls();
  wireCanvas();
  try {
    const health = await api.health();
    $("health").textContent = `model @ iteration ${health.iteration}`;
    renderSampleList(await api.samples());
  } catch (error) {
    showError(`service unreachable: ${error instanceof Error ? error.message : error}`);
    ($("synthesize-btn") as HTMLButtonElement).disabled = true;
  }
}

void boot();
