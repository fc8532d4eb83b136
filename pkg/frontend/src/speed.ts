/** Pump speed command model.
 *
 * Every write the UI can produce funnels through sanitizeSpeed, so no
 * button combination or stale state can post a value outside the
 * plant's -9..9 window.
 */

export const SPEED_MIN = -9;
export const SPEED_MAX = 9;

export type KnobPosition = "Fwd" | "Stp" | "Rev";

/** Coerce an arbitrary number to a legal speed command, or null if it
 * cannot be one (NaN, infinities). */
export function sanitizeSpeed(value: number): number | null {
  if (typeof value !== "number" || !Number.isFinite(value)) return null;
  const rounded = Math.round(value);
  if (rounded < SPEED_MIN) return SPEED_MIN;
  if (rounded > SPEED_MAX) return SPEED_MAX;
  // Math.round(-0.2) gives -0; normalize so callers compare cleanly
  return rounded === 0 ? 0 : rounded;
}

export function stepSpeed(current: number, delta: 1 | -1): number {
  const base = sanitizeSpeed(current);
  return sanitizeSpeed((base === null ? 0 : base) + delta) as number;
}

/** Knob semantics: Stp zeroes, Fwd/Rev keep the magnitude but force
 * the sign, waking a stopped pump at 1. */
export function applyKnob(current: number, pos: KnobPosition): number {
  const base = sanitizeSpeed(current);
  const magnitude = base === null ? 0 : Math.abs(base);
  switch (pos) {
    case "Stp":
      return 0;
    case "Fwd":
      return magnitude === 0 ? 1 : magnitude;
    case "Rev":
      return magnitude === 0 ? -1 : -magnitude;
  }
}

/** The knob position implied by a live speed value, for display. */
export function knobFor(speed: number): KnobPosition {
  if (speed > 0) return "Fwd";
  if (speed < 0) return "Rev";
  return "Stp";
}
