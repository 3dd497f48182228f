/** Screen <-> image coordinate math for the zoom/pan viewport. */

export interface Viewport {
  /** integer magnification, image pixels to screen pixels */
  zoom: number;
  /** screen-space position of the image origin */
  panX: number;
  panY: number;
}

export const ZOOM_LEVELS = [1, 2, 4, 8, 16];

export interface Point {
  x: number;
  y: number;
}

/** Inverse of the view transform; lands on the integer pixel under the cursor. */
export function screenToImage(view: Viewport, sx: number, sy: number): Point {
  return {
    x: Math.floor((sx - view.panX) / view.zoom),
    y: Math.floor((sy - view.panY) / view.zoom),
  };
}

/** Screen position of an image pixel's top-left corner. */
export function imageToScreen(view: Viewport, ix: number, iy: number): Point {
  return { x: ix * view.zoom + view.panX, y: iy * view.zoom + view.panY };
}

/** Step zoom up/down one level, keeping the image point under the anchor fixed. */
export function zoomStep(view: Viewport, direction: 1 | -1, anchorX: number, anchorY: number): Viewport {
  const index = ZOOM_LEVELS.indexOf(view.zoom);
  const next = ZOOM_LEVELS[Math.min(ZOOM_LEVELS.length - 1, Math.max(0, index + direction))];
  if (next === view.zoom) {
    return view;
  }
  const ix = (anchorX - view.panX) / view.zoom;
  const iy = (anchorY - view.panY) / view.zoom;
  return {
    zoom: next,
    panX: Math.round(anchorX - ix * next),
    panY: Math.round(anchorY - iy * next),
  };
}

export function panBy(view: Viewport, dx: number, dy: number): Viewport {
  return { zoom: view.zoom, panX: view.panX + dx, panY: view.panY + dy };
}
