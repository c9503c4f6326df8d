/**
 * Deterministic color scales: a diverging blue-white-red map with a fixed
 * midpoint for signed deltas (negative = degradation = red), and the same
 * map applied to log10(ratio) for loss-ratio cells (midpoint at ratio 1).
 */

const NEGATIVE = [178, 24, 43]; // red end (degradation)
const MIDPOINT = [255, 255, 255];
const POSITIVE = [33, 102, 172]; // blue end (improvement)

function mix(a: number[], b: number[], t: number): number[] {
  return a.map((av, i) => Math.round(av + (b[i] - av) * t));
}

function hex(rgb: number[]): string {
  return "#" + rgb.map((v) => v.toString(16).padStart(2, "0")).join("");
}

/** t in [-1, 1]; 0 maps to the neutral midpoint. */
export function divergingColor(t: number): string {
  const clamped = Math.max(-1, Math.min(1, t));
  if (clamped < 0) return hex(mix(MIDPOINT, NEGATIVE, -clamped));
  return hex(mix(MIDPOINT, POSITIVE, clamped));
}

/** Signed delta (percentage points) on a fixed [-limit, +limit] scale. */
export function deltaColor(deltaPp: number, limit = 10): string {
  return divergingColor(deltaPp / limit);
}

/** Ratio on a log10 scale over [10^-decades, 10^decades], midpoint 1. */
export function ratioColor(ratio: number, decades = 2): string {
  if (!(ratio > 0)) return "#bbbbbb";
  return divergingColor(Math.log10(ratio) / decades);
}

export const MISSING_COLOR = "#bbbbbb";
export const NEUTRAL_COLOR = hex(MIDPOINT);
