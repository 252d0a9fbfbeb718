/** Worklist presentation rules: server order is authoritative. */

import { WorklistEntry } from "./types.js";

/** Entries exactly as served; the client never re-sorts. */
export function displayOrder(entries: WorklistEntry[]): WorklistEntry[] {
  return [...entries];
}

export function isHighlighted(entry: WorklistEntry, userId: string): boolean {
  return entry.assigned_to === userId;
}

export function entryLabel(entry: WorklistEntry): string {
  const priority = entry.priority === null ? "–" : entry.priority.toFixed(2);
  return `${entry.study_id} · ${entry.modality} · p=${priority} · ${entry.state}`;
}
