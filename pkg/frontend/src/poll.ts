/** Snapshot poll loop: one request every 1.5 seconds, with a stale
 * flag once two polls in a row have failed. */

import { ApiClient, TagSnapshot } from "./api.js";

export const POLL_INTERVAL_MS = 1500;
export const STALE_AFTER_MISSES = 2;

export interface PollerHooks {
  onSnapshot(snap: TagSnapshot): void;
  onStale(stale: boolean): void;
}

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private misses = 0;
  private stale = false;
  private inFlight = false;

  constructor(private api: ApiClient, private hooks: PollerHooks,
              readonly intervalMs: number = POLL_INTERVAL_MS) {}

  get isStale(): boolean {
    return this.stale;
  }

  get missCount(): number {
    return this.misses;
  }

  start(): void {
    if (this.timer !== null) return;
    void this.tick();
    this.timer = setInterval(() => void this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async tick(): Promise<void> {
    if (this.inFlight) return; // a slow server should not stack requests
    this.inFlight = true;
    try {
      const snap = await this.api.tags();
      this.misses = 0;
      this.setStale(false);
      this.hooks.onSnapshot(snap);
    } catch {
      this.misses += 1;
      if (this.misses >= STALE_AFTER_MISSES) this.setStale(true);
    } finally {
      this.inFlight = false;
    }
  }

  private setStale(next: boolean): void {
    if (next !== this.stale) {
      this.stale = next;
      this.hooks.onStale(next);
    }
  }
}
