/** Marching-squares isolines over the server-provided dose grid.
 *
 * Pure display geometry: the scalar values come from the service, this only
 * turns them into polyline segments for the canvas.
 */

export type Segment = [[number, number], [number, number]];

function lerp(a: number, b: number, va: number, vb: number, level: number): number {
  const t = (level - va) / (vb - va);
  return a + t * (b - a);
}

/** Contour segments of values (grid[i][j] at u=us[i], v=vs[j]) at one level. */
export function isolineSegments(
  values: number[][],
  us: number[],
  vs: number[],
  level: number,
): Segment[] {
  const segments: Segment[] = [];
  const ni = values.length;
  const nj = ni ? values[0].length : 0;
  for (let i = 0; i < ni - 1; i++) {
    for (let j = 0; j < nj - 1; j++) {
      const v00 = values[i][j];
      const v10 = values[i + 1][j];
      const v01 = values[i][j + 1];
      const v11 = values[i + 1][j + 1];
      let caseId = 0;
      if (v00 >= level) caseId |= 1;
      if (v10 >= level) caseId |= 2;
      if (v11 >= level) caseId |= 4;
      if (v01 >= level) caseId |= 8;
      if (caseId === 0 || caseId === 15) continue;

      const left: [number, number] = [us[i], lerp(vs[j], vs[j + 1], v00, v01, level)];
      const right: [number, number] = [us[i + 1], lerp(vs[j], vs[j + 1], v10, v11, level)];
      const bottom: [number, number] = [lerp(us[i], us[i + 1], v00, v10, level), vs[j]];
      const top: [number, number] = [lerp(us[i], us[i + 1], v01, v11, level), vs[j + 1]];

      switch (caseId) {
        case 1: case 14: segments.push([left, bottom]); break;
        case 2: case 13: segments.push([bottom, right]); break;
        case 3: case 12: segments.push([left, right]); break;
        case 4: case 11: segments.push([top, right]); break;
        case 6: case 9: segments.push([bottom, top]); break;
        case 7: case 8: segments.push([left, top]); break;
        case 5:
          segments.push([left, bottom]);
          segments.push([top, right]);
          break;
        case 10:
          segments.push([left, top]);
          segments.push([bottom, right]);
          break;
      }
    }
  }
  return segments;
}

export function gridAxes(range: [number, number], n: number): number[] {
  const [lo, hi] = range;
  const out: number[] = [];
  for (let i = 0; i < n; i++) out.push(lo + ((hi - lo) * i) / (n - 1));
  return out;
}
