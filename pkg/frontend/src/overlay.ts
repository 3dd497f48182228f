/** Mask overlay helpers, DOM-free so they are testable in node.
 * The server renders instances on black; black becomes transparent here and
 * the caller blends the rest over the imagery at the chosen opacity. */

import { BoxRow } from "./api.js";

/** In-place: zero alpha on background (black) pixels, full alpha elsewhere. */
export function maskToOverlay(rgba: Uint8ClampedArray): Uint8ClampedArray {
  for (let i = 0; i < rgba.length; i += 4) {
    const background = rgba[i] === 0 && rgba[i + 1] === 0 && rgba[i + 2] === 0;
    rgba[i + 3] = background ? 0 : 255;
  }
  return rgba;
}

/** Pure alpha-over compositing, mirroring what the canvas does on screen. */
export function compositeOverlay(
  base: Uint8ClampedArray,
  overlay: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray {
  if (base.length !== overlay.length) {
    throw new Error(`buffer sizes differ: ${base.length} vs ${overlay.length}`);
  }
  const out = new Uint8ClampedArray(base.length);
  for (let i = 0; i < base.length; i += 4) {
    const alpha = (overlay[i + 3] / 255) * opacity;
    for (let c = 0; c < 3; c += 1) {
      out[i + c] = Math.round(overlay[i + c] * alpha + base[i + c] * (1 - alpha));
    }
    out[i + 3] = 255;
  }
  return out;
}

/** Smallest exported box containing the pixel, for hover info and erasing.
 * Bounds are min-inclusive, max-exclusive, like the server's. */
export function hitInstance(boxes: BoxRow[], x: number, y: number): BoxRow | null {
  let best: BoxRow | null = null;
  let bestArea = Infinity;
  for (const box of boxes) {
    if (x < box.x_min || x >= box.x_max || y < box.y_min || y >= box.y_max) {
      continue;
    }
    const area = (box.x_max - box.x_min) * (box.y_max - box.y_min);
    if (area < bestArea) {
      best = box;
      bestArea = area;
    }
  }
  return best;
}
