/** Wire types for the model service HTTP API. */

export interface WireEnvelope<T> {
  data: T[];
  status: string;
}

export interface ModelListing {
  model: string;
  version: string;
}

/** One per-label finding from GET /bounding-box with an image body. */
export interface WireFinding {
  annotationText: string;
  probability: number;
  x1?: number;
  x2?: number;
  x3?: number;
  x4?: number;
  y1?: number;
  y2?: number;
  y3?: number;
  y4?: number;
  model: string;
  modelVersion: string;
  status: string;
}

export interface WorklistEntry {
  study_id: string;
  accession_order: number;
  modality: string;
  priority: number | null;
  assigned_to: string | null;
  state: string;
}

export interface StoredAnnotation {
  annotation_id: string;
  study_id: string;
  author: string;
  label: string;
  box: BoxCorners;
  annotationText: string;
  created_at: number;
  enabled: boolean;
}

export interface StudyDocument {
  study_id: string;
  width: number;
  height: number;
  image: string; // Base64 grayscale, row-major
  model?: string;
  annotations?: StoredAnnotation[];
}

/** Axis-aligned rectangle as TL, TR, BR, BL corners in pixel units. */
export interface BoxCorners {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
  x3: number;
  y3: number;
  x4: number;
  y4: number;
}

export interface BoxExtent {
  xMin: number;
  yMin: number;
  xMax: number;
  yMax: number;
}

export function boxFromExtent(extent: BoxExtent): BoxCorners {
  return {
    x1: extent.xMin,
    y1: extent.yMin,
    x2: extent.xMax,
    y2: extent.yMin,
    x3: extent.xMax,
    y3: extent.yMax,
    x4: extent.xMin,
    y4: extent.yMax,
  };
}

export function boxToExtent(box: BoxCorners): BoxExtent {
  return { xMin: box.x1, yMin: box.y1, xMax: box.x3, yMax: box.y3 };
}

export function findingBox(finding: WireFinding): BoxCorners | null {
  if (
    finding.x1 === undefined ||
    finding.x2 === undefined ||
    finding.x3 === undefined ||
    finding.x4 === undefined ||
    finding.y1 === undefined ||
    finding.y2 === undefined ||
    finding.y3 === undefined ||
    finding.y4 === undefined
  ) {
    return null;
  }
  return {
    x1: finding.x1,
    y1: finding.y1,
    x2: finding.x2,
    y2: finding.y2,
    x3: finding.x3,
    y3: finding.y3,
    x4: finding.x4,
    y4: finding.y4,
  };
}
