import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { DEFAULT_FILL, fillFractionAt, fillUnitsAt } from "../src/fill.js";

interface FillFixture {
  period_s: number;
  units: number;
  samples: { t: number; fill: number }[];
}

const fixture: FillFixture = JSON.parse(
  readFileSync(fileURLToPath(new URL("./fixtures/fill_contract.json", import.meta.url)), "utf8"),
);

describe("fill contract (S1)", () => {
  it("fixture covers 20 s on a 0.1 s grid", () => {
    expect(fixture.samples.length).toBe(201);
    expect(fixture.samples[0].t).toBe(0);
    expect(fixture.samples.at(-1)!.t).toBe(20);
  });

  it("matches the exported service fixture at every sample", () => {
    const cfg = { periodS: fixture.period_s, units: fixture.units };
    for (const { t, fill } of fixture.samples) {
      expect(fillUnitsAt(t, cfg), `t=${t}`).toBe(fill);
    }
  });

  it("uses the same defaults as the service", () => {
    expect(DEFAULT_FILL.periodS).toBe(fixture.period_s);
    expect(DEFAULT_FILL.units).toBe(fixture.units);
  });

  it("handles boundary instants", () => {
    expect(fillUnitsAt(0)).toBe(0);
    expect(fillUnitsAt(3.2)).toBe(3);
    expect(fillUnitsAt(4.999)).toBe(4);
    expect(fillUnitsAt(5.0)).toBe(0); // reset on the period boundary
    expect(fillUnitsAt(6.0)).toBe(1);
  });

  it("rejects negative and non-finite times", () => {
    expect(() => fillUnitsAt(-0.1)).toThrow(RangeError);
    expect(() => fillUnitsAt(Number.NaN)).toThrow(RangeError);
    expect(() => fillUnitsAt(Infinity)).toThrow(RangeError);
  });

  it("fraction is units-normalized", () => {
    expect(fillFractionAt(3.2)).toBeCloseTo(3 / 5, 12);
    expect(fillFractionAt(5.0)).toBe(0);
  });
});
