/** Console wiring: one session per tab, mutations serialized, all numbers
 * server-sourced. */

import { ApiClient, DoseSlice, ServiceError, SessionState } from "./api.js";
import { consumeSse } from "./sse.js";
import {
  AnimationFrame,
  applyFailure,
  applyServerState,
  framesFromEvents,
  initialViewState,
  StepEvent,
  ViewState,
} from "./state.js";
import { drawSlice, SliceTransform } from "./render.js";

const api = new ApiClient("");
let view: ViewState = initialViewState();
let slice: DoseSlice | null = null;
let transform: SliceTransform | null = null;
let mutationInFlight = false;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function fmt(x: number, digits = 3): string {
  return Number.isFinite(x) ? x.toFixed(digits) : "-";
}

function renderMetrics(): void {
  $("metric-v100").textContent = fmt(view.metrics.v100, 3);
  $("metric-d90").textContent = fmt(view.metrics.d90, 1);
  $("metric-seeds").textContent = String(view.metrics.seed_count);
  $("metric-revision").textContent = String(view.revision);
  $("spin-input").setAttribute("value", String(view.spinRate));
  $("edema-label").textContent = `${Math.round(view.edemaFraction * 100)} %`;
}

function renderBanner(): void {
  const el = $("banner");
  if (view.banner.kind === "none") {
    el.className = "banner hidden";
    el.textContent = "";
    return;
  }
  el.className = `banner ${view.banner.kind}`;
  el.textContent = view.banner.message;
  if (view.banner.kind === "conflict" || view.banner.kind === "disconnected") {
    const btn = document.createElement("button");
    btn.textContent = view.banner.kind === "conflict" ? "Refresh" : "Reconnect";
    btn.onclick = () => void refreshState();
    el.appendChild(btn);
  }
}

function renderCanvas(): void {
  if (!slice || !view.server) return;
  const canvas = $("slice-canvas") as HTMLCanvasElement;
  transform = drawSlice(canvas, slice, view.server, view.overlays, view.selected);
  $("slice-label").textContent =
    `${slice.axis} = ${fmt(slice.offset_mm, 1)} mm (rev ${slice.revision})`;
}

function renderAll(): void {
  renderMetrics();
  renderBanner();
  renderCanvas();
}

async function refreshSlice(): Promise<void> {
  if (!view.sessionId) return;
  try {
    slice = await api.doseSlice(view.sessionId, view.axis, view.offsetMm, 64);
    renderCanvas();
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
  }
}

async function refreshState(): Promise<void> {
  if (!view.sessionId) return;
  try {
    const state = await api.getState(view.sessionId);
    view = applyServerState(view, state);
    await refreshSlice();
    renderAll();
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
  }
}

/** Serialize mutations client-side; never retried silently. */
async function mutate(mutation: Parameters<ApiClient["mutate"]>[2]): Promise<boolean> {
  if (!view.sessionId || mutationInFlight) return false;
  mutationInFlight = true;
  try {
    const state = await api.mutate(view.sessionId, view.revision, mutation);
    view = applyServerState(view, state);
    await refreshSlice();
    renderAll();
    return true;
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
    return false;
  } finally {
    mutationInFlight = false;
  }
}

function sliceClickTarget(x: number, y: number): { col: number; row: number; depth: number } | null {
  if (!transform || !view.server || !slice) return null;
  const [u, v] = transform.fromCanvas(x, y);
  const pitch = view.server.grid.pitch;
  if (slice.axis === "z") {
    // axial: u = lateral x, v = insertion depth along y
    return { col: Math.round(u / pitch), row: Math.round(slice.offset_mm / pitch), depth: v };
  }
  // sagittal: u = depth along y, v = vertical z
  return { col: Math.round(slice.offset_mm / pitch), row: Math.round(v / pitch), depth: u };
}

function nearestSeed(col: number, row: number, depth: number) {
  if (!view.server) return null;
  for (const traj of view.server.draft.trajectories) {
    if (traj.col !== col || traj.row !== row) continue;
    for (const d of traj.depths) {
      if (Math.abs(d - depth) < 3.0) {
        return { col, row, tilt_deg: traj.tilt_deg, depth: d };
      }
    }
  }
  return null;
}

function wireCanvas(): void {
  const canvas = $("slice-canvas") as HTMLCanvasElement;
  let dragging: { col: number; row: number; tilt_deg: number; depth: number } | null = null;

  canvas.addEventListener("mousedown", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const target = sliceClickTarget(ev.clientX - rect.left, ev.clientY - rect.top);
    if (!target) return;
    dragging = nearestSeed(target.col, target.row, target.depth);
    view = { ...view, selected: dragging };
    renderCanvas();
  });

  canvas.addEventListener("mouseup", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const target = sliceClickTarget(ev.clientX - rect.left, ev.clientY - rect.top);
    if (!target) { dragging = null; return; }
    const depth = Math.round(target.depth * 2) / 2;
    if (dragging) {
      const moved = Math.abs(depth - dragging.depth) > 0.25
        || target.col !== dragging.col || target.row !== dragging.row;
      if (moved) {
        void mutate({ op: "move_seed", col: dragging.col, row: dragging.row,
                      tilt_deg: dragging.tilt_deg, depth: dragging.depth,
                      to_col: target.col, to_row: target.row, to_depth: depth });
      }
    } else {
      void mutate({ op: "add_seed", col: target.col, row: target.row, depth });
    }
    dragging = null;
  });
}

function renderFrame(frame: AnimationFrame): void {
  $("anim-needle").textContent = frame.trajectory === null ? "-" : String(frame.trajectory + 1);
  $("anim-depth").textContent = fmt(frame.travelMm, 1);
  $("anim-disp").textContent = fmt(frame.displacementMm, 2);
  $("anim-deposits").textContent = String(frame.deposits);
  $("anim-note").textContent = frame.note;
  const bar = $("anim-depth-bar");
  bar.style.width = `${Math.min(100, frame.travelMm / 1.6)}%`;
}

function renderTrialTable(trial: Record<string, unknown>): void {
  const errors = trial.per_seed_error as number[];
  $("trial-summary").textContent =
    `mean ${fmt(trial.mean_error as number, 3)} mm / max ${fmt(trial.max_error as number, 3)} mm / ` +
    `peak displacement ${fmt(trial.peak_prostate_displacement as number, 3)} mm`;
  const tbody = $("trial-rows");
  tbody.innerHTML = "";
  errors.forEach((err, i) => {
    const tr = document.createElement("tr");
    tr.innerHTML = `<td>${i + 1}</td><td>${err.toFixed(3)}</td>`;
    tbody.appendChild(tr);
  });
}

async function runInsertion(): Promise<void> {
  if (!view.sessionId) return;
  $("anim-note").textContent = "running...";
  const events: StepEvent[] = [];
  let finalTrial: Record<string, unknown> | null = null;
  let finalRevision = view.revision;
  try {
    const body = await api.execute(view.sessionId, view.revision);
    await consumeSse(body, (msg) => {
      if (msg.event === "step") {
        events.push(msg.data as StepEvent);
      } else if (msg.event === "result") {
        const payload = msg.data as { revision: number; trial: Record<string, unknown> };
        finalTrial = payload.trial;
        finalRevision = payload.revision;
      }
    });
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
    return;
  }
  view = { ...view, revision: finalRevision };
  // animate purely from the recorded event feed
  const frames = framesFromEvents(events);
  for (const frame of frames) {
    renderFrame(frame);
    await new Promise((resolve) => setTimeout(resolve, 12));
  }
  if (finalTrial) renderTrialTable(finalTrial);
  renderMetrics();
}

async function start(scenario: string): Promise<void> {
  try {
    const state = await api.createSession(scenario);
    view = applyServerState(initialViewState(), state);
    const withMeshes = await api.getState(state.session_id);
    view = applyServerState(view, withMeshes);
    view = { ...view, offsetMm: 0 };
    const lo = withMeshes.bounds.lo, hi = withMeshes.bounds.hi;
    const slider = $("offset-slider") as HTMLInputElement;
    slider.min = String(Math.floor(lo[2] - 5));
    slider.max = String(Math.ceil(hi[2] + 5));
    slider.value = "0";
    await refreshSlice();
    renderAll();
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
  }
}

async function main(): Promise<void> {
  const picker = $("scenario-picker") as HTMLSelectElement;
  try {
    const { scenarios } = await api.scenarios();
    picker.innerHTML = scenarios.map((s) => `<option value="${s}">${s}</option>`).join("");
  } catch {
    picker.innerHTML = `<option value="reference">reference</option>`;
  }
  $("new-session").onclick = () => void start(picker.value);

  const slider = $("offset-slider") as HTMLInputElement;
  slider.oninput = () => {
    view = { ...view, offsetMm: Number(slider.value) };
    void refreshSlice();
  };
  ($("axis-toggle") as HTMLSelectElement).onchange = (ev) => {
    view = { ...view, axis: (ev.target as HTMLSelectElement).value as "x" | "z" };
    void refreshSlice();
  };
  $("delete-seed").onclick = () => {
    if (view.selected) {
      void mutate({ op: "delete_seed", ...view.selected });
      view = { ...view, selected: null };
    }
  };
  $("apply-spin").onclick = () => {
    const spin = Number(($("spin-input") as HTMLInputElement).value);
    void mutate({ op: "set_spin", spin_rate: spin });
  };
  $("apply-edema").onclick = () => {
    const fraction = Number(($("edema-input") as HTMLInputElement).value) / 100;
    void mutate({ op: "apply_edema", fraction });
  };
  $("optimize-grid").onclick = () => void optimize("grid");
  $("optimize-oblique").onclick = () => void optimize("oblique");
  $("run-insertion").onclick = () => void runInsertion();
  $("export-bundle").onclick = () => void exportBundle();
  wireCanvas();
  void start(picker.value || "reference");
}

async function optimize(mode: string): Promise<void> {
  if (!view.sessionId) return;
  try {
    const state = await api.optimize(view.sessionId, view.revision, mode);
    view = applyServerState(view, state);
    await refreshSlice();
    renderAll();
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
  }
}

async function exportBundle(): Promise<void> {
  if (!view.sessionId) return;
  try {
    const bundle = await api.export(view.sessionId);
    const blob = new Blob([JSON.stringify(bundle, null, 1)], { type: "application/json" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = `prosper-session-${view.sessionId}.json`;
    a.click();
  } catch (failure) {
    view = applyFailure(view, failure as ServiceError | Error);
    renderBanner();
  }
}

document.addEventListener("DOMContentLoaded", () => void main());
