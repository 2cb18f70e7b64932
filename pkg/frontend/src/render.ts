/** Canvas drawing for the slice viewer. Pure presentation. */

import type { DoseSlice, SessionState } from "./api.js";
import { gridAxes, isolineSegments } from "./isolines.js";

export interface SliceTransform {
  toCanvas(u: number, v: number): [number, number];
  fromCanvas(x: number, y: number): [number, number];
}

export function makeTransform(
  slice: { u_range: [number, number]; v_range: [number, number] },
  width: number,
  height: number,
  pad = 24,
): SliceTransform {
  const [u0, u1] = slice.u_range;
  const [v0, v1] = slice.v_range;
  const sx = (width - 2 * pad) / (u1 - u0);
  const sy = (height - 2 * pad) / (v1 - v0);
  const s = Math.min(sx, sy);
  const cx = pad + ((width - 2 * pad) - s * (u1 - u0)) / 2;
  const cy = pad + ((height - 2 * pad) - s * (v1 - v0)) / 2;
  return {
    toCanvas: (u, v) => [cx + (u - u0) * s, height - (cy + (v - v0) * s)],
    fromCanvas: (x, y) => [u0 + (x - cx) / s, v0 + (height - y - cy) / s],
  };
}

const ISODOSE_LEVELS = [0.5, 1.0, 1.5];  // fractions of the prescription
const ISODOSE_COLORS = ["#7db2e8", "#e8a13d", "#d94f4f"];

function drawPolylines(
  ctx: CanvasRenderingContext2D,
  segments: number[][][],
  tf: SliceTransform,
  color: string,
  width = 1.5,
) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  for (const seg of segments) {
    const [a, b] = seg;
    const [x0, y0] = tf.toCanvas(a[0], a[1]);
    const [x1, y1] = tf.toCanvas(b[0], b[1]);
    ctx.moveTo(x0, y0);
    ctx.lineTo(x1, y1);
  }
  ctx.stroke();
}

export function drawSlice(
  canvas: HTMLCanvasElement,
  slice: DoseSlice,
  state: SessionState,
  overlays: { grid: boolean; arch: boolean; isodose: boolean; needles: boolean },
  selected: { col: number; row: number; depth: number } | null,
): SliceTransform {
  const ctx = canvas.getContext("2d")!;
  const tf = makeTransform(slice, canvas.width, canvas.height);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, canvas.width, canvas.height);

  // template grid (axial view: u axis is lateral x, holes every pitch)
  if (overlays.grid && slice.axis === "z") {
    const pitch = state.grid.pitch;
    const half = state.grid.half_index;
    ctx.fillStyle = "#2d3a49";
    for (let c = -half; c <= half; c++) {
      const [x, y] = tf.toCanvas(c * pitch, 0);
      ctx.fillRect(x - 1, y - 3, 2, 6);
    }
  }

  if (overlays.isodose) {
    const us = gridAxes(slice.u_range, slice.resolution);
    const vs = gridAxes(slice.v_range, slice.resolution);
    ISODOSE_LEVELS.forEach((frac, i) => {
      const segs = isolineSegments(slice.values, us, vs, frac * slice.prescription);
      drawPolylines(ctx, segs as unknown as number[][][], tf, ISODOSE_COLORS[i], 1.2);
    });
  }

  drawPolylines(ctx, slice.target_contour, tf, "#69d08f", 2.0);
  if (overlays.arch && slice.arch_contour.length) {
    drawPolylines(ctx, slice.arch_contour, tf, "#c2b28b", 2.0);
  }

  // seeds projected into the slice plane
  const axisIndex = slice.axis === "z" ? 2 : 0;
  const uIndex = slice.u_axis === "x" ? 0 : slice.u_axis === "y" ? 1 : 2;
  const vIndex = slice.v_axis === "x" ? 0 : slice.v_axis === "y" ? 1 : 2;
  for (const seed of state.draft.seeds) {
    const p = seed.position;
    const near = Math.abs(p[axisIndex] - slice.offset_mm) < 4.0;
    const [x, y] = tf.toCanvas(p[uIndex], p[vIndex]);
    ctx.fillStyle = near ? "#f2e14c" : "rgba(242,225,76,0.25)";
    ctx.beginPath();
    ctx.arc(x, y, near ? 4 : 2.5, 0, 2 * Math.PI);
    ctx.fill();
  }

  // needle paths in-plane
  if (overlays.needles && slice.axis === "z") {
    const row = Math.round(slice.offset_mm / state.grid.pitch);
    for (const traj of state.draft.trajectories) {
      if (traj.row !== row) continue;
      const maxDepth = Math.max(...traj.depths);
      const [x0, y0] = tf.toCanvas(traj.col * state.grid.pitch, 0);
      const [x1, y1] = tf.toCanvas(traj.col * state.grid.pitch, maxDepth);
      ctx.strokeStyle = "#8a93a6";
      ctx.setLineDash([4, 3]);
      ctx.beginPath();
      ctx.moveTo(x0, y0);
      ctx.lineTo(x1, y1);
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }

  if (selected) {
    const su = slice.axis === "z" ? selected.col * state.grid.pitch : selected.depth;
    const sv = slice.axis === "z" ? selected.depth : selected.row * state.grid.pitch;
    const [x, y] = tf.toCanvas(slice.axis === "z" ? su : selected.depth, sv);
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 1.0;
    ctx.beginPath();
    ctx.arc(x, y, 7, 0, 2 * Math.PI);
    ctx.stroke();
  }
  return tf;
}
