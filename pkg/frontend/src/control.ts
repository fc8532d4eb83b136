/** Pump command state: optimistic display, confirmed-by-poll value,
 * and revert-with-message when the plant rejects a write. */

export interface ControlHooks {
  onRender(speed: number): void;
  onError(message: string | null): void;
}

export class SpeedCommander {
  private displayed = 0;
  private confirmed = 0;

  constructor(private write: (value: number) => Promise<number | null>,
              private hooks: ControlHooks) {}

  get value(): number {
    return this.displayed;
  }

  /** A fresh snapshot from the plant wins over any optimism. */
  fromPoll(speed: number): void {
    this.confirmed = speed;
    if (this.displayed !== speed) {
      this.displayed = speed;
      this.hooks.onRender(speed);
    }
  }

  /** Show the target immediately, then confirm or roll back. */
  async act(target: number): Promise<void> {
    const fallback = this.confirmed;
    this.displayed = target;
    this.hooks.onRender(target);
    this.hooks.onError(null);
    try {
      const sent = await this.write(target);
      if (sent === null) {
        this.rollBack(fallback, "not a usable speed");
      }
    } catch (err) {
      this.rollBack(fallback,
                    err instanceof Error ? err.message : "write failed");
    }
  }

  private rollBack(fallback: number, message: string): void {
    this.displayed = fallback;
    this.hooks.onRender(fallback);
    this.hooks.onError(message);
  }
}
