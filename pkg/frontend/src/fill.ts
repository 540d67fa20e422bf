/**
 * Shared fill contract for the time-pressure progress bar.
 *
 * The bar gains one unit per whole elapsed second and wraps every
 * `periodS` seconds, so the participant senses urgency without being able
 * to read off exact time. The same function is exported by the trial
 * service as a JSON fixture (`export-fixtures`), and the contract test
 * checks the two implementations sample-for-sample.
 */

export interface FillConfig {
  /** Seconds per full cycle; the bar resets to empty at each multiple. */
  periodS: number;
  /** Number of discrete bar segments (equal to periodS by default). */
  units: number;
}

export const DEFAULT_FILL: FillConfig = { periodS: 5, units: 5 };

/** Number of lit units at `tS` seconds since trial onset. */
export function fillUnitsAt(tS: number, cfg: FillConfig = DEFAULT_FILL): number {
  if (!Number.isFinite(tS) || tS < 0) {
    throw new RangeError(`elapsed time must be finite and >= 0, got ${tS}`);
  }
  return Math.floor(tS) % cfg.periodS;
}

/** Fraction of the bar lit, for renderers that draw a continuous bar. */
export function fillFractionAt(tS: number, cfg: FillConfig = DEFAULT_FILL): number {
  return fillUnitsAt(tS, cfg) / cfg.units;
}
