import { describe, expect, it } from "vitest";

import { PLANT_THRESHOLDS, bandClass, classifyLevel } from "../src/bands.js";
import golden from "./band_golden.json";

describe("level bands", () => {
  it("ships the same thresholds the plant uses", () => {
    expect(golden.thresholds).toEqual({ hh: 95, h: 80, l: 20, ll: 5 });
    expect(PLANT_THRESHOLDS).toEqual(golden.thresholds);
  });

  it("matches every golden case", () => {
    for (const [level, band] of golden.cases as [number, string][]) {
      expect(classifyLevel(level), `level ${level}`).toBe(band);
    }
    expect(golden.cases.length).toBeGreaterThan(150);
  });

  it("keeps the alarm-side boundaries inclusive", () => {
    expect(classifyLevel(95)).toBe("HH");
    expect(classifyLevel(94.999)).toBe("H");
    expect(classifyLevel(80)).toBe("H");
    expect(classifyLevel(79.999)).toBe("NORMAL");
    expect(classifyLevel(5)).toBe("LL");
    expect(classifyLevel(5.001)).toBe("L");
    expect(classifyLevel(20)).toBe("L");
    expect(classifyLevel(20.001)).toBe("NORMAL");
  });

  it("maps bands to css suffixes", () => {
    expect(bandClass("HH")).toBe("band-hh");
    expect(bandClass("NORMAL")).toBe("band-normal");
  });
});
