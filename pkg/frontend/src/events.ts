/** Event strip: recent alarm-bit and poll-fault transitions. */

import { PlantEvent } from "./api.js";

export const STRIP_LIMIT = 30;

const LABELS: Record<string, string> = {
  tank1_full: "tank 1 full",
  tank2_full: "tank 2 full",
  tank1_high: "tank 1 high",
  tank2_high: "tank 2 high",
  poll_fault: "comms fault",
};

export function eventLabel(ev: PlantEvent): string {
  const name = LABELS[ev.name] ?? ev.name;
  return `t=${ev.t.toFixed(1)}s  ${name} ${ev.active ? "RAISED" : "cleared"}`;
}

/** Newest first, capped, as display strings. */
export function stripLines(events: PlantEvent[]): string[] {
  return events.slice(-STRIP_LIMIT).reverse().map(eventLabel);
}
