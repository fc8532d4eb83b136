/** Typed client for the testbed HTTP JSON API. */

import { Band } from "./bands.js";
import { sanitizeSpeed } from "./speed.js";

export interface TagValue {
  value: number;
  lo: number;
  hi: number;
  in_range: boolean;
  band?: Band;
}

export interface TagSnapshot {
  time: number;
  tags: Record<string, TagValue>;
  alarm: boolean;
  warning: boolean;
  alarms: Record<string, boolean>;
  pump: "Fwd" | "Stp" | "Rev";
  poll_fault: boolean;
}

export interface PlantEvent {
  t: number;
  name: string;
  active: boolean;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(private base: string = "",
              private fetchFn: FetchLike = (u, i) => fetch(u, i)) {}

  async tags(): Promise<TagSnapshot> {
    const resp = await this.fetchFn(this.base + "/api/tags");
    if (!resp.ok) throw new Error("tags: HTTP " + resp.status);
    return (await resp.json()) as TagSnapshot;
  }

  async events(limit = 50): Promise<PlantEvent[]> {
    const resp = await this.fetchFn(this.base + "/api/events?limit=" + limit);
    if (!resp.ok) throw new Error("events: HTTP " + resp.status);
    const body = (await resp.json()) as { events: PlantEvent[] };
    return body.events;
  }

  /** The only write the HMI performs. The value is sanitized here, at
   * the last exit, so no caller can push an out-of-range speed onto
   * the wire; impossible values resolve to null and no request is
   * made. */
  async writeSpeed(value: number): Promise<number | null> {
    const speed = sanitizeSpeed(value);
    if (speed === null) return null;
    const resp = await this.fetchFn(this.base + "/api/write", {
      method: "POST",
      body: JSON.stringify({ tag: "PumpSpeed", value: speed }),
    });
    if (!resp.ok) throw new Error("write: HTTP " + resp.status);
    return speed;
  }
}
