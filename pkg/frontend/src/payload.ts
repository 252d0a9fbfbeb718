/** Builds model-update request bodies in the service's exact schema.

The twelve base fields are emitted first, in the documented order
(annotationText, image, model, modelVersion, x1..x4, y1..y4), followed by the
width/height/disposition/study_id extensions. modelVersion is a number on the
request side; responses carry it back as a string.
*/

import { BoxCorners } from "./types.js";

export type Disposition = "disabled" | "relabeled" | "box-adjusted" | "added";

export interface CorrectionEdit {
  disposition: Disposition;
  label: string;
  /** The box being submitted; for "disabled" the original finding's box. */
  box: BoxCorners;
}

export interface StudyContext {
  studyId: string;
  imageBase64: string;
  width: number;
  height: number;
  model: string;
  /** Version string as displayed by the badge. */
  modelVersion: string;
}

export interface ModelUpdateRequest {
  annotationText: string;
  image: string;
  model: string;
  modelVersion: number;
  x1: number;
  x2: number;
  x3: number;
  x4: number;
  y1: number;
  y2: number;
  y3: number;
  y4: number;
  width: number;
  height: number;
  disposition: Disposition;
  study_id: string;
}

export const MODEL_UPDATE_BASE_FIELDS = [
  "annotationText",
  "image",
  "model",
  "modelVersion",
  "x1",
  "x2",
  "x3",
  "x4",
  "y1",
  "y2",
  "y3",
  "y4",
] as const;

export const MODEL_UPDATE_EXTENSION_FIELDS = [
  "width",
  "height",
  "disposition",
  "study_id",
] as const;

export function buildModelUpdatePayload(
  edit: CorrectionEdit,
  ctx: StudyContext,
): ModelUpdateRequest {
  const version = Number.parseInt(ctx.modelVersion, 10);
  if (Number.isNaN(version)) {
    throw new Error(`model version ${JSON.stringify(ctx.modelVersion)} is not numeric`);
  }
  return {
    annotationText: edit.label,
    image: ctx.imageBase64,
    model: ctx.model,
    modelVersion: version,
    x1: edit.box.x1,
    x2: edit.box.x2,
    x3: edit.box.x3,
    x4: edit.box.x4,
    y1: edit.box.y1,
    y2: edit.box.y2,
    y3: edit.box.y3,
    y4: edit.box.y4,
    width: ctx.width,
    height: ctx.height,
    disposition: edit.disposition,
    study_id: ctx.studyId,
  };
}
