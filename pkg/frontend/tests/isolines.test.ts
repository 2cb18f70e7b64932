import { describe, expect, it } from "vitest";

import { gridAxes, isolineSegments } from "../src/isolines.js";

describe("isolineSegments", () => {
  it("returns nothing for a uniform field", () => {
    const values = [[1, 1], [1, 1]];
    expect(isolineSegments(values, [0, 1], [0, 1], 5)).toEqual([]);
  });

  it("finds the midline of a linear ramp", () => {
    // values[i][j] = i over a 3x3 grid: the 0.5-level line is at u = 0.5
    const values = [[0, 0, 0], [1, 1, 1], [2, 2, 2]];
    const axes = [0, 1, 2];
    const segments = isolineSegments(values, axes, axes, 0.5);
    expect(segments.length).toBeGreaterThan(0);
    for (const [a, b] of segments) {
      expect(a[0]).toBeCloseTo(0.5, 10);
      expect(b[0]).toBeCloseTo(0.5, 10);
    }
  });

  it("closes a loop around a single hot cell region", () => {
    const n = 9;
    const axes = gridAxes([0, 8], n);
    const values = Array.from({ length: n }, (_, i) =>
      Array.from({ length: n }, (_, j) => {
        const du = i - 4;
        const dv = j - 4;
        return 10 - (du * du + dv * dv);
      }),
    );
    // 4.5 never coincides with a grid value (10 - integer), so the loop is clean
    const segments = isolineSegments(values, axes, axes, 4.5);
    // every segment endpoint appears exactly twice in a closed loop
    const counts = new Map<string, number>();
    for (const seg of segments) {
      for (const p of seg) {
        const key = `${p[0].toFixed(9)},${p[1].toFixed(9)}`;
        counts.set(key, (counts.get(key) ?? 0) + 1);
      }
    }
    for (const c of counts.values()) expect(c).toBe(2);
  });

  it("gridAxes spans the range inclusively", () => {
    const axes = gridAxes([-3, 5], 5);
    expect(axes[0]).toBe(-3);
    expect(axes[4]).toBe(5);
    expect(axes).toHaveLength(5);
  });
});
