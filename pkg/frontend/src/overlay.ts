/** Overlay layer: which findings to draw and how, never touching the image.

Rendering goes through a minimal rectangle-drawer interface so the logic is
testable without a browser canvas. The image lives on its own layer; all the
overlay ever does is stroke rectangles and labels onto a second surface.
*/

import { BoxCorners, WireFinding, findingBox } from "./types.js";

export interface RectDrawer {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  fillStyle: string | CanvasGradient | CanvasPattern;
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export interface OverlaySettings {
  /** Hide every overlay when no probability reaches the detection threshold. */
  suppressNormalCases: boolean;
  detectionThreshold: number;
}

export const DEFAULT_SETTINGS: OverlaySettings = {
  suppressNormalCases: false,
  detectionThreshold: 0.5,
};

const PALETTE = ["#ff5252", "#40c4ff", "#ffd740", "#69f0ae", "#e040fb"];

export function colorFor(index: number): string {
  return PALETTE[index % PALETTE.length] as string;
}

/**
 * The findings whose boxes should be on screen: box present, not toggled
 * off, and not suppressed as a normal case.
 */
export function visibleFindings(
  findings: WireFinding[],
  enabled: Record<string, boolean>,
  settings: OverlaySettings = DEFAULT_SETTINGS,
): WireFinding[] {
  if (
    settings.suppressNormalCases &&
    findings.every((f) => f.probability < settings.detectionThreshold)
  ) {
    return [];
  }
  return findings.filter(
    (f) => findingBox(f) !== null && enabled[f.annotationText] !== false,
  );
}

export function drawBox(ctx: RectDrawer, box: BoxCorners, color: string, scale = 1): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.strokeRect(
    box.x1 * scale,
    box.y1 * scale,
    (box.x3 - box.x1 + 1) * scale,
    (box.y3 - box.y1 + 1) * scale,
  );
}

/** Redraw the whole overlay layer for the current view. */
export function renderOverlay(
  ctx: RectDrawer,
  findings: WireFinding[],
  enabled: Record<string, boolean>,
  settings: OverlaySettings,
  viewport: { width: number; height: number; scale: number },
  draft?: BoxCorners | null,
): void {
  ctx.clearRect(0, 0, viewport.width, viewport.height);
  const visible = visibleFindings(findings, enabled, settings);
  for (const finding of visible) {
    const box = findingBox(finding);
    if (box === null) {
      continue;
    }
    const index = findings.indexOf(finding);
    const color = colorFor(index);
    drawBox(ctx, box, color, viewport.scale);
    ctx.font = "12px sans-serif";
    ctx.fillStyle = color;
    ctx.fillText(
      `${finding.annotationText} ${(finding.probability * 100).toFixed(0)}%`,
      box.x1 * viewport.scale,
      Math.max(10, box.y1 * viewport.scale - 4),
    );
  }
  if (draft) {
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 1;
    ctx.strokeRect(
      draft.x1 * viewport.scale,
      draft.y1 * viewport.scale,
      (draft.x3 - draft.x1 + 1) * viewport.scale,
      (draft.y3 - draft.y1 + 1) * viewport.scale,
    );
  }
}
