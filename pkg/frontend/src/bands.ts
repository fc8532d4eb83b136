/** Level band classification, kept in lockstep with the plant side.
 *
 * The server already sends a band per tank; this local copy colors the
 * gauges between polls and is pinned to the shared golden table by the
 * test suite. Boundaries are inclusive on the alarm side: full at or
 * above hh, high from h up to hh, empty at or below ll, low from just
 * above ll through l.
 */

export type Band = "LL" | "L" | "NORMAL" | "H" | "HH";

export interface Thresholds {
  hh: number;
  h: number;
  l: number;
  ll: number;
}

export const PLANT_THRESHOLDS: Thresholds = { hh: 95, h: 80, l: 20, ll: 5 };

export function classifyLevel(level: number, t: Thresholds = PLANT_THRESHOLDS): Band {
  if (level >= t.hh) return "HH";
  if (level >= t.h) return "H";
  if (level <= t.ll) return "LL";
  if (level <= t.l) return "L";
  return "NORMAL";
}

/** CSS class suffix for a band (gauge fill and badge coloring). */
export function bandClass(band: Band): string {
  return "band-" + band.toLowerCase();
}
