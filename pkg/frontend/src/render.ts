/** Pure pixel compositing shared by the DOM app and the headless flow test. */

import { NUM_CLASSES, PALETTE } from "./palette.js";
import { DecodedImage } from "./png.js";

/** Class grid -> opaque RGBA using the fixed palette. */
export function gridToRgba(grid: Uint8Array, width: number, height: number): Uint8ClampedArray {
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const [r, g, b] = PALETTE[Math.min(grid[i], NUM_CLASSES - 1)];
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}

/** Decoded PNG -> opaque RGBA (gray, RGB or RGBA input). */
export function imageToRgba(img: DecodedImage): Uint8ClampedArray {
  const { width, height, channels, data } = img;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    let r: number, g: number, b: number, a = 255;
    if (channels === 1) {
      r = g = b = data[i];
    } else if (channels === 2) {
      r = g = b = data[2 * i];
      a = data[2 * i + 1];
    } else if (channels === 3) {
      r = data[3 * i];
      g = data[3 * i + 1];
      b = data[3 * i + 2];
    } else {
      r = data[4 * i];
      g = data[4 * i + 1];
      b = data[4 * i + 2];
      a = data[4 * i + 3];
    }
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = a;
  }
  return out;
}

/** Source image with the translucent class overlay (background stays clear). */
export function composeOverlay(base: Uint8ClampedArray, grid: Uint8Array,
                               width: number, height: number,
                               alpha = 0.45): Uint8ClampedArray {
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < width * height; i++) {
    const cls = grid[i];
    if (cls === 0) {
      continue;
    }
    const [r, g, b] = PALETTE[cls];
    out[4 * i] = Math.round((1 - alpha) * out[4 * i] + alpha * r);
    out[4 * i + 1] = Math.round((1 - alpha) * out[4 * i + 1] + alpha * g);
    out[4 * i + 2] = Math.round((1 - alpha) * out[4 * i + 2] + alpha * b);
  }
  return out;
}
