/**
 * Screen <-> image coordinate mapping.
 *
 * Image pixel (row, col) occupies the screen rectangle
 * [col*zoom + panX, (col+1)*zoom + panX) x [row*zoom + panY, (row+1)*zoom + panY),
 * so a click anywhere inside a pixel's rectangle selects that pixel and the
 * continuous mapping is exactly invertible.
 */

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export interface ScreenPoint {
  x: number;
  y: number;
}

/** Continuous image coordinates; row/col in [0, P) x [0, Q) when on-image. */
export interface ImagePoint {
  row: number;
  col: number;
}

export interface Pixel {
  row: number;
  col: number;
}

export function screenToImage(pt: ScreenPoint, vp: Viewport): ImagePoint {
  return {
    row: (pt.y - vp.panY) / vp.zoom,
    col: (pt.x - vp.panX) / vp.zoom,
  };
}

export function imageToScreen(pt: ImagePoint, vp: Viewport): ScreenPoint {
  return {
    x: pt.col * vp.zoom + vp.panX,
    y: pt.row * vp.zoom + vp.panY,
  };
}

/** The pixel under a screen position (floor of the continuous coordinate). */
export function pixelFromScreen(pt: ScreenPoint, vp: Viewport): Pixel {
  const img = screenToImage(pt, vp);
  return { row: Math.floor(img.row), col: Math.floor(img.col) };
}

/** Screen position of a pixel's center, for drawing markers. */
export function pixelCenterOnScreen(px: Pixel, vp: Viewport): ScreenPoint {
  return imageToScreen({ row: px.row + 0.5, col: px.col + 0.5 }, vp);
}

export function insideImage(px: Pixel, dims: { height: number; width: number }): boolean {
  return px.row >= 0 && px.row < dims.height && px.col >= 0 && px.col < dims.width;
}
