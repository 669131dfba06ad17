/** The five working semantic classes and their fixed display palette. */

export type ClassIndex = 0 | 1 | 2 | 3 | 4;

export const CLASS_NAMES = ["background", "skin", "eyes", "nose", "mouth"] as const;

export const NUM_CLASSES = CLASS_NAMES.length;

/** background #000000, skin #cc8866, eyes #00cc00, nose #0066ff, mouth #cc0000 */
export const PALETTE: ReadonlyArray<readonly [number, number, number]> = [
  [0x00, 0x00, 0x00],
  [0xcc, 0x88, 0x66],
  [0x00, 0xcc, 0x00],
  [0x00, 0x66, 0xff],
  [0xcc, 0x00, 0x00],
];

export function paletteCss(classIndex: ClassIndex): string {
  const [r, g, b] = PALETTE[classIndex];
  return `rgb(${r}, ${g}, ${b})`;
}
