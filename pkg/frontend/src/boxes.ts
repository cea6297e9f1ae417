/** Grid-cell to pixel-rectangle mapping and the per-pair color palette. */

export interface PixelRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

/**
 * Map grid cell (row, col) of a g-by-g grid onto a displayed image of
 * width x height pixels: [col*W/g, row*H/g, W/g, H/g].
 */
export function cellToRect(row: number, col: number, grid: number,
                           width: number, height: number): PixelRect {
  if (grid < 1 || row < 0 || col < 0 || row >= grid || col >= grid) {
    throw new Error(`cell (${row}, ${col}) outside ${grid}x${grid} grid`);
  }
  return {
    left: (col * width) / grid,
    top: (row * height) / grid,
    width: width / grid,
    height: height / grid,
  };
}

/** Fixed five-color palette indexed by pair rank; query box i and its
 * support box share PALETTE[i]. */
export const PALETTE = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4"] as const;

export function pairColor(pairRank: number): string {
  return PALETTE[pairRank % PALETTE.length];
}
