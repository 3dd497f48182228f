/** Display palette for instance ids, identical to the server's renderer so
 * client-side swatches and hover chips match the overlay. */

export type Rgb = [number, number, number];

export const PALETTE: Rgb[] = [
  [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200],
  [245, 130, 48], [145, 30, 180], [70, 240, 240], [240, 50, 230],
  [210, 245, 60], [250, 190, 190], [0, 128, 128], [170, 110, 40],
];

export function colorForInstance(id: number): Rgb {
  if (id < 1) {
    throw new Error(`instance ids start at 1, got ${id}`);
  }
  return PALETTE[(id - 1) % PALETTE.length];
}

export function cssColor([r, g, b]: Rgb): string {
  return `rgb(${r}, ${g}, ${b})`;
}
