/** View state: selection, overlay toggles, and in-progress box edits.

Box edits are corner drags clamped to the image bounds; the draft box only
becomes a submission payload when the edit completes.
*/

import { BoxCorners, BoxExtent, boxFromExtent, boxToExtent } from "./types.js";

export interface ImageBounds {
  width: number;
  height: number;
}

export type Corner = "tl" | "tr" | "br" | "bl";

export function clampExtent(extent: BoxExtent, bounds: ImageBounds): BoxExtent {
  const clampX = (x: number) => Math.min(Math.max(Math.round(x), 0), bounds.width - 1);
  const clampY = (y: number) => Math.min(Math.max(Math.round(y), 0), bounds.height - 1);
  const xMin = clampX(Math.min(extent.xMin, extent.xMax));
  const xMax = clampX(Math.max(extent.xMin, extent.xMax));
  const yMin = clampY(Math.min(extent.yMin, extent.yMax));
  const yMax = clampY(Math.max(extent.yMin, extent.yMax));
  return { xMin, yMin, xMax, yMax };
}

export function translateBox(box: BoxCorners, dx: number, dy: number, bounds: ImageBounds): BoxCorners {
  const extent = boxToExtent(box);
  const width = extent.xMax - extent.xMin;
  const height = extent.yMax - extent.yMin;
  let xMin = extent.xMin + Math.round(dx);
  let yMin = extent.yMin + Math.round(dy);
  xMin = Math.min(Math.max(xMin, 0), bounds.width - 1 - width);
  yMin = Math.min(Math.max(yMin, 0), bounds.height - 1 - height);
  return boxFromExtent({ xMin, yMin, xMax: xMin + width, yMax: yMin + height });
}

export function dragCorner(
  box: BoxCorners,
  corner: Corner,
  x: number,
  y: number,
  bounds: ImageBounds,
): BoxCorners {
  const extent = boxToExtent(box);
  const moved: BoxExtent = { ...extent };
  if (corner === "tl") {
    moved.xMin = x;
    moved.yMin = y;
  } else if (corner === "tr") {
    moved.xMax = x;
    moved.yMin = y;
  } else if (corner === "br") {
    moved.xMax = x;
    moved.yMax = y;
  } else {
    moved.xMin = x;
    moved.yMax = y;
  }
  return boxFromExtent(clampExtent(moved, bounds));
}

export interface BoxEdit {
  label: string;
  corner: Corner | "move" | "draw";
  draft: BoxCorners;
}

export class ViewState {
  studyId: string | null = null;
  selectedLabel: string | null = null;
  overlayEnabled: Record<string, boolean> = {};
  suppressNormalCases = false;
  edit: BoxEdit | null = null;

  toggleOverlay(label: string): boolean {
    const next = !(this.overlayEnabled[label] ?? true);
    this.overlayEnabled[label] = next;
    return next;
  }

  beginDraw(label: string, x: number, y: number, bounds: ImageBounds): void {
    const extent = clampExtent({ xMin: x, yMin: y, xMax: x, yMax: y }, bounds);
    this.edit = { label, corner: "draw", draft: boxFromExtent(extent) };
  }

  beginCornerDrag(label: string, box: BoxCorners, corner: Corner): void {
    this.edit = { label, corner, draft: box };
  }

  beginMove(label: string, box: BoxCorners): void {
    this.edit = { label, corner: "move", draft: box };
  }

  dragTo(x: number, y: number, bounds: ImageBounds): BoxCorners | null {
    if (this.edit === null) {
      return null;
    }
    if (this.edit.corner === "draw") {
      const start = boxToExtent(this.edit.draft);
      this.edit.draft = boxFromExtent(
        clampExtent({ xMin: start.xMin, yMin: start.yMin, xMax: x, yMax: y }, bounds),
      );
    } else if (this.edit.corner === "move") {
      const extent = boxToExtent(this.edit.draft);
      this.edit.draft = translateBox(
        this.edit.draft,
        x - (extent.xMin + extent.xMax) / 2,
        y - (extent.yMin + extent.yMax) / 2,
        bounds,
      );
    } else {
      this.edit.draft = dragCorner(this.edit.draft, this.edit.corner, x, y, bounds);
    }
    return this.edit.draft;
  }

  completeEdit(): BoxEdit | null {
    const edit = this.edit;
    this.edit = null;
    return edit;
  }

  cancelEdit(): void {
    this.edit = null;
  }
}
