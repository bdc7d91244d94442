/**
 * Canvas compositing of the annotation layers.
 *
 * Rendering goes through a minimal 2D-context interface so the drawing logic
 * is testable without a browser; the real CanvasRenderingContext2D satisfies
 * it structurally.
 */

import { MatchDoc, PromptView } from "./api.js";
import { Viewport, pixelCenterOnScreen } from "./coords.js";

export const POSITIVE_COLOR = "#22c55e"; // green
export const NEGATIVE_COLOR = "#ef4444"; // red
export const MASK_FILL = "rgba(34, 197, 94, 0.45)";

export interface DrawableImage {
  readonly width: number;
  readonly height: number;
}

/** Subset of CanvasRenderingContext2D the renderer uses. */
export interface Draw2D {
  save(): void;
  restore(): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  drawImage(image: any, dx: number, dy: number, dw: number, dh: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  stroke(): void;
  fillStyle: string | unknown;
  strokeStyle: string | unknown;
  globalAlpha: number;
  lineWidth: number;
  imageSmoothingEnabled?: boolean;
}

function layerRect(image: DrawableImage, vp: Viewport): [number, number, number, number] {
  return [vp.panX, vp.panY, image.width * vp.zoom, image.height * vp.zoom];
}

export function drawBaseImage(ctx: Draw2D, image: DrawableImage, vp: Viewport): void {
  ctx.save();
  if ("imageSmoothingEnabled" in ctx) ctx.imageSmoothingEnabled = false;
  ctx.drawImage(image, ...layerRect(image, vp));
  ctx.restore();
}

/** Semi-transparent mask fill; `mask` is a raster the context can draw. */
export function drawMaskLayer(ctx: Draw2D, mask: DrawableImage, vp: Viewport): void {
  ctx.save();
  if ("imageSmoothingEnabled" in ctx) ctx.imageSmoothingEnabled = false;
  ctx.globalAlpha = 0.45;
  ctx.drawImage(mask, ...layerRect(mask, vp));
  ctx.restore();
}

/** Grayscale similarity layer under the markers. */
export function drawHeatmapLayer(ctx: Draw2D, heatmap: DrawableImage, vp: Viewport): void {
  ctx.save();
  if ("imageSmoothingEnabled" in ctx) ctx.imageSmoothingEnabled = false;
  ctx.globalAlpha = 0.7;
  ctx.drawImage(heatmap, ...layerRect(heatmap, vp));
  ctx.restore();
}

function drawDot(ctx: Draw2D, x: number, y: number, color: string): void {
  ctx.beginPath();
  ctx.arc(x, y, 5, 0, 2 * Math.PI);
  ctx.fillStyle = color;
  ctx.globalAlpha = 1.0;
  ctx.fill();
  ctx.strokeStyle = "#ffffff";
  ctx.lineWidth = 1.5;
  ctx.stroke();
}

/** Template-side markers: the prompts the user placed. */
export function drawPromptMarkers(ctx: Draw2D, prompts: PromptView[], vp: Viewport): void {
  for (const p of prompts) {
    const { x, y } = pixelCenterOnScreen({ row: p.row, col: p.col }, vp);
    drawDot(ctx, x, y, p.polarity === "positive" ? POSITIVE_COLOR : NEGATIVE_COLOR);
  }
}

/** Target-side markers: where each prompt landed. */
export function drawMatchMarkers(ctx: Draw2D, matches: MatchDoc[], vp: Viewport): void {
  for (const m of matches) {
    const { x, y } = pixelCenterOnScreen({ row: m.target[0], col: m.target[1] }, vp);
    drawDot(ctx, x, y, m.polarity === "positive" ? POSITIVE_COLOR : NEGATIVE_COLOR);
  }
}

export interface TargetScene {
  image: DrawableImage | null;
  mask: DrawableImage | null;
  heatmap: DrawableImage | null;
  matches: MatchDoc[];
  toggles: { prompts: boolean; mask: boolean; heatmap: boolean };
}

/** Compose a target view: base image, then heatmap, mask, and markers. */
export function renderTargetScene(
  ctx: Draw2D,
  scene: TargetScene,
  vp: Viewport,
  canvasSize: { width: number; height: number },
): void {
  ctx.clearRect(0, 0, canvasSize.width, canvasSize.height);
  if (scene.image) drawBaseImage(ctx, scene.image, vp);
  if (scene.toggles.heatmap && scene.heatmap) drawHeatmapLayer(ctx, scene.heatmap, vp);
  if (scene.toggles.mask && scene.mask) drawMaskLayer(ctx, scene.mask, vp);
  if (scene.toggles.prompts) drawMatchMarkers(ctx, scene.matches, vp);
}
