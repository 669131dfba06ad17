/** Minimal PNG codec for the wire format.
 *
 * Encoding targets exactly what the server expects for masks: 8-bit indexed
 * (color type 3) with the class palette, zlib stream made of stored deflate
 * blocks. Decoding handles the PNGs the server produces: 8-bit gray, RGB,
 * RGBA or indexed, any scanline filter, inflated via DecompressionStream.
 */

import { PALETTE } from "./palette.js";

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

export interface DecodedImage {
  width: number;
  height: number;
  /** samples per pixel after defiltering: 1 (gray/indexed), 2, 3 or 4 */
  channels: number;
  data: Uint8Array;
}

// ---------------------------------------------------------------------------
// checksums

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    c = CRC_TABLE[(c ^ bytes[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(bytes: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < bytes.length; i++) {
    a = (a + bytes[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

// ---------------------------------------------------------------------------
// encoding

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(8 + payload.length + 4);
  const view = new DataView(out.buffer);
  view.setUint32(0, payload.length);
  for (let i = 0; i < 4; i++) {
    out[4 + i] = type.charCodeAt(i);
  }
  out.set(payload, 8);
  view.setUint32(8 + payload.length, crc32(out.subarray(4, 8 + payload.length)));
  return out;
}

/** zlib stream with stored (uncompressed) deflate blocks. */
function zlibStored(raw: Uint8Array): Uint8Array {
  const blocks: Uint8Array[] = [new Uint8Array([0x78, 0x01])];
  const max = 0xffff;
  for (let off = 0; off < raw.length || off === 0; off += max) {
    const slice = raw.subarray(off, Math.min(off + max, raw.length));
    const last = off + max >= raw.length;
    const header = new Uint8Array(5);
    header[0] = last ? 1 : 0;
    header[1] = slice.length & 0xff;
    header[2] = slice.length >>> 8;
    header[3] = ~slice.length & 0xff;
    header[4] = (~slice.length >>> 8) & 0xff;
    blocks.push(header, slice);
    if (last) break;
  }
  const trailer = new Uint8Array(4);
  new DataView(trailer.buffer).setUint32(0, adler32(raw));
  blocks.push(trailer);
  return concat(blocks);
}

function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

/** Encode a class-index grid as an 8-bit indexed PNG with the fixed palette. */
export function encodeIndexedPng(grid: Uint8Array, width: number, height: number): Uint8Array {
  if (grid.length !== width * height) {
    throw new Error(`grid length ${grid.length} != ${width}x${height}`);
  }
  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 3;   // indexed
  const plte = new Uint8Array(PALETTE.length * 3);
  PALETTE.forEach(([r, g, b], i) => {
    plte[3 * i] = r;
    plte[3 * i + 1] = g;
    plte[3 * i + 2] = b;
  });
  const raw = new Uint8Array(height * (width + 1));
  for (let y = 0; y < height; y++) {
    raw[y * (width + 1)] = 0; // filter: none
    raw.set(grid.subarray(y * width, (y + 1) * width), y * (width + 1) + 1);
  }
  return concat([
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("PLTE", plte),
    chunk("IDAT", zlibStored(raw)),
    chunk("IEND", new Uint8Array(0)),
  ]);
}

// ---------------------------------------------------------------------------
// decoding

async function inflate(data: Uint8Array): Promise<Uint8Array> {
  const stream = new Blob([data as BlobPart]).stream()
    .pipeThrough(new DecompressionStream("deflate"));
  return new Uint8Array(await new Response(stream).arrayBuffer());
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

const CHANNELS: Record<number, number> = { 0: 1, 2: 3, 3: 1, 4: 2, 6: 4 };

export async function decodePng(bytes: Uint8Array): Promise<DecodedImage> {
  if (bytes.length < 8 || SIGNATURE.some((v, i) => bytes[i] !== v)) {
    throw new Error("not a PNG");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  let off = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = -1;
  const idat: Uint8Array[] = [];
  while (off < bytes.length) {
    const length = view.getUint32(off);
    const type = String.fromCharCode(bytes[off + 4], bytes[off + 5],
                                     bytes[off + 6], bytes[off + 7]);
    const payload = bytes.subarray(off + 8, off + 8 + length);
    if (type === "IHDR") {
      width = view.getUint32(off + 8);
      height = view.getUint32(off + 12);
      bitDepth = bytes[off + 16];
      colorType = bytes[off + 17];
      if (bytes[off + 18] !== 0 || bytes[off + 20] !== 0) {
        throw new Error("unsupported compression or interlacing");
      }
    } else if (type === "IDAT") {
      idat.push(payload);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + length;
  }
  if (bitDepth !== 8 || !(colorType in CHANNELS)) {
    throw new Error(`unsupported PNG: bit depth ${bitDepth}, color type ${colorType}`);
  }
  const channels = CHANNELS[colorType];
  const stride = width * channels;
  const raw = await inflate(concat(idat));
  if (raw.length < height * (stride + 1)) {
    throw new Error("truncated PNG data");
  }
  const out = new Uint8Array(height * stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const row = y * stride;
    const prev = row - stride;
    for (let x = 0; x < stride; x++) {
      const left = x >= channels ? out[row + x - channels] : 0;
      const up = y > 0 ? out[prev + x] : 0;
      const upLeft = y > 0 && x >= channels ? out[prev + x - channels] : 0;
      let v = line[x];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) >> 1; break;
        case 4: v += paeth(left, up, upLeft); break;
        default: throw new Error(`unknown scanline filter ${filter}`);
      }
      out[row + x] = v & 0xff;
    }
  }
  return { width, height, channels, data: out };
}

/** Decode a mask PNG into a class grid, validating the class range. */
export async function decodeMaskPng(bytes: Uint8Array, numClasses = PALETTE.length):
    Promise<{ width: number; height: number; grid: Uint8Array }> {
  const img = await decodePng(bytes);
  if (img.channels !== 1) {
    throw new Error("mask PNG must be indexed or grayscale");
  }
  for (let i = 0; i < img.data.length; i++) {
    if (img.data[i] >= numClasses) {
      throw new Error(`mask value ${img.data[i]} outside 0..${numClasses - 1}`);
    }
  }
  return { width: img.width, height: img.height, grid: img.data };
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  for (let i = 0; i < bytes.length; i++) {
    binary += String.fromCharCode(bytes[i]);
  }
  return btoa(binary);
}

export function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    out[i] = binary.charCodeAt(i);
  }
  return out;
}
