/** Console view state and its transitions.
 *
 * The rendered state always carries the server revision it reflects; edits
 * against a stale revision turn into a visible conflict prompt instead of a
 * silent retry.
 */

import type { Metrics, ServiceError, SessionState } from "./api.js";

export type Banner =
  | { kind: "none" }
  | { kind: "conflict"; message: string }
  | { kind: "disconnected"; message: string }
  | { kind: "infeasible"; message: string }
  | { kind: "rejected"; message: string };

export interface ViewState {
  sessionId: string | null;
  revision: number;
  axis: "x" | "z";
  offsetMm: number;
  overlays: { grid: boolean; arch: boolean; isodose: boolean; needles: boolean };
  selected: { col: number; row: number; tilt_deg: number; depth: number } | null;
  metrics: Metrics;
  spinRate: number;
  edemaFraction: number;
  banner: Banner;
  server: SessionState | null;
}

export function initialViewState(): ViewState {
  return {
    sessionId: null,
    revision: -1,
    axis: "z",
    offsetMm: 0,
    overlays: { grid: true, arch: true, isodose: true, needles: true },
    selected: null,
    metrics: { d90: 0, v100: 0, seed_count: 0 },
    spinRate: 0,
    edemaFraction: 0,
    banner: { kind: "none" },
    server: null,
  };
}

/** Adopt a fresh server state; metrics are taken verbatim from the response. */
export function applyServerState(view: ViewState, server: SessionState): ViewState {
  return {
    ...view,
    sessionId: server.session_id,
    revision: server.revision,
    metrics: server.metrics,
    spinRate: server.spin_rate,
    edemaFraction: server.edema_fraction,
    banner: { kind: "none" },
    server: { ...server, meshes: server.meshes ?? view.server?.meshes },
  };
}

/** Map a failed request onto the banner the operator should see. */
export function applyFailure(view: ViewState, failure: ServiceError | Error): ViewState {
  if (failure instanceof Error) {
    return { ...view, banner: { kind: "disconnected", message: "connection lost - reconnect to continue" } };
  }
  if (failure.error === "RevisionConflict") {
    return { ...view, banner: { kind: "conflict", message: "plan changed on the server - refresh to continue editing" } };
  }
  if (failure.error === "InfeasibleNoTrajectories") {
    return { ...view, banner: { kind: "infeasible", message: failure.message } };
  }
  return { ...view, banner: { kind: "rejected", message: failure.message } };
}

// ---------------------------------------------------------------------------
// insertion animation built purely from the event feed
// ---------------------------------------------------------------------------

export interface StepEvent {
  t: number;
  kind: string;
  detail: Record<string, unknown>;
}

export interface AnimationFrame {
  t: number;
  trajectory: number | null;
  travelMm: number;
  displacementMm: number;
  deposits: number;
  passiveStops: number;
  note: string;
}

/** Fold the ordered event feed into animation frames.
 *
 * Every number in the animation is traceable to an event field; nothing is
 * simulated on the client.
 */
export function framesFromEvents(events: StepEvent[]): AnimationFrame[] {
  const frames: AnimationFrame[] = [];
  let trajectory: number | null = null;
  let travel = 0;
  let displacement = 0;
  let deposits = 0;
  let stops = 0;
  for (const ev of events) {
    let note = "";
    switch (ev.kind) {
      case "insertion_started":
        trajectory = Number(ev.detail.trajectory);
        travel = 0;
        note = `needle ${trajectory + 1}`;
        break;
      case "advance":
        travel = Number(ev.detail.travel_mm);
        displacement = Number(ev.detail.displacement_mm);
        break;
      case "deposit":
        travel = Number(ev.detail.travel_mm);
        deposits += 1;
        note = "seed deposited";
        break;
      case "deposit_outside_gland":
        travel = Number(ev.detail.travel_mm);
        deposits += 1;
        note = "seed deposited outside gland";
        break;
      case "passive_stop":
        stops += 1;
        note = "passive stop";
        break;
      case "trajectory_skipped":
        note = "trajectory skipped";
        break;
      case "relaxed":
        displacement = 0;
        travel = 0;
        note = "gland relaxed";
        break;
      default:
        continue;
    }
    frames.push({
      t: ev.t,
      trajectory,
      travelMm: travel,
      displacementMm: displacement,
      deposits,
      passiveStops: stops,
      note,
    });
  }
  return frames;
}
