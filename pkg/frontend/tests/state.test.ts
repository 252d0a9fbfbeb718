import { describe, expect, it } from "vitest";

import { ViewState, clampExtent, dragCorner, translateBox } from "../src/state.js";
import { boxFromExtent, boxToExtent } from "../src/types.js";

const BOUNDS = { width: 64, height: 64 };

describe("box editing", () => {
  it("clamps extents to the image", () => {
    expect(clampExtent({ xMin: -5, yMin: 10, xMax: 80, yMax: 200 }, BOUNDS)).toEqual({
      xMin: 0, yMin: 10, xMax: 63, yMax: 63,
    });
  });

  it("normalizes inverted drags", () => {
    expect(clampExtent({ xMin: 20, yMin: 30, xMax: 5, yMax: 10 }, BOUNDS)).toEqual({
      xMin: 5, yMin: 10, xMax: 20, yMax: 30,
    });
  });

  it("translation preserves the box size at the border", () => {
    const box = boxFromExtent({ xMin: 50, yMin: 50, xMax: 60, yMax: 60 });
    const moved = translateBox(box, 30, 0, BOUNDS);
    const extent = boxToExtent(moved);
    expect(extent.xMax - extent.xMin).toBe(10);
    expect(extent.xMax).toBe(63);
  });

  it("corner drags clamp to bounds", () => {
    const box = boxFromExtent({ xMin: 10, yMin: 10, xMax: 20, yMax: 20 });
    const dragged = dragCorner(box, "br", 999, 999, BOUNDS);
    expect(boxToExtent(dragged)).toEqual({ xMin: 10, yMin: 10, xMax: 63, yMax: 63 });
  });
});

describe("ViewState", () => {
  it("toggles overlays per label", () => {
    const view = new ViewState();
    expect(view.toggleOverlay("lesion-a")).toBe(false);
    expect(view.toggleOverlay("lesion-a")).toBe(true);
    expect(view.overlayEnabled["lesion-a"]).toBe(true);
  });

  it("draw edits clamp and complete once", () => {
    const view = new ViewState();
    view.beginDraw("lesion-b", 10, 10, BOUNDS);
    view.dragTo(90, 40, BOUNDS);
    const edit = view.completeEdit();
    expect(edit?.label).toBe("lesion-b");
    expect(boxToExtent(edit!.draft)).toEqual({ xMin: 10, yMin: 10, xMax: 63, yMax: 40 });
    expect(view.completeEdit()).toBeNull();
  });

  it("cancel discards the draft", () => {
    const view = new ViewState();
    view.beginDraw("lesion-a", 1, 1, BOUNDS);
    view.cancelEdit();
    expect(view.edit).toBeNull();
  });
});
