import { describe, expect, it } from "vitest";

import type { SessionState } from "../src/api.js";
import {
  applyFailure,
  applyServerState,
  framesFromEvents,
  initialViewState,
  StepEvent,
} from "../src/state.js";
import { parseSseChunk } from "../src/sse.js";

function serverState(overrides: Partial<SessionState> = {}): SessionState {
  return {
    session_id: "abc",
    scenario: "reference",
    revision: 3,
    spin_rate: 30,
    edema_fraction: 0,
    draft: { trajectories: [], seeds: [] },
    metrics: { d90: 151.25, v100: 0.962, seed_count: 40 },
    prescription: 145,
    bounds: { lo: [-20, 50, -20], hi: [20, 90, 20] },
    grid: { pitch: 5, half_index: 6 },
    has_trial: false,
    state_hash: "deadbeef",
    ...overrides,
  };
}

describe("view state", () => {
  it("adopts server metrics verbatim (no client-side dose math)", () => {
    const server = serverState();
    const view = applyServerState(initialViewState(), server);
    expect(view.metrics).toBe(server.metrics);   // same object, untouched
    expect(view.revision).toBe(3);
    expect(view.banner.kind).toBe("none");
  });

  it("stale-revision failures surface a conflict prompt", () => {
    const view = applyFailure(initialViewState(), {
      status: 409, error: "RevisionConflict", message: "stale",
    });
    expect(view.banner.kind).toBe("conflict");
    expect(view.banner).toHaveProperty("message");
  });

  it("network failures surface a reconnect state", () => {
    const view = applyFailure(initialViewState(), new TypeError("fetch failed"));
    expect(view.banner.kind).toBe("disconnected");
  });

  it("infeasible planning passes through as its own banner", () => {
    const view = applyFailure(initialViewState(), {
      status: 422, error: "InfeasibleNoTrajectories", message: "arch-blocked",
    });
    expect(view.banner.kind).toBe("infeasible");
  });
});

describe("framesFromEvents", () => {
  const events: StepEvent[] = [
    { t: 0.0, kind: "insertion_started", detail: { trajectory: 0, depth_mm: 70 } },
    { t: 1.0, kind: "advance", detail: { trajectory: 0, travel_mm: 5.0, displacement_mm: 0.4 } },
    { t: 2.0, kind: "advance", detail: { trajectory: 0, travel_mm: 10.0, displacement_mm: 1.1 } },
    { t: 3.0, kind: "deposit", detail: { travel_mm: 10.0, world: [0, 10, 0], rest: [0, 9, 0] } },
    { t: 4.0, kind: "relaxed", detail: { trajectory: 0 } },
  ];

  it("builds frames only from event fields", () => {
    const frames = framesFromEvents(events);
    expect(frames).toHaveLength(5);
    expect(frames[2].travelMm).toBe(10.0);
    expect(frames[2].displacementMm).toBe(1.1);
    expect(frames[3].deposits).toBe(1);
    expect(frames[4].displacementMm).toBe(0);
  });

  it("counts passive stops and skips", () => {
    const frames = framesFromEvents([
      ...events.slice(0, 2),
      { t: 2.5, kind: "passive_stop", detail: { clearance_mm: 0.2, force_N: 1.0 } },
      { t: 2.5, kind: "trajectory_skipped", detail: { trajectory: 0 } },
    ]);
    expect(frames.at(-1)!.passiveStops).toBe(1);
    expect(frames.at(-1)!.note).toBe("trajectory skipped");
  });
});

describe("parseSseChunk", () => {
  it("parses complete blocks and keeps the remainder", () => {
    const chunk = 'event: step\ndata: {"t": 1}\n\nevent: step\ndata: {"t": 2}\n\nevent: res';
    const { messages, rest } = parseSseChunk(chunk);
    expect(messages).toHaveLength(2);
    expect(messages[0]).toEqual({ event: "step", data: { t: 1 } });
    expect(rest).toBe("event: res");
  });

  it("handles multi-line data fields", () => {
    const { messages } = parseSseChunk('data: {"a":\ndata: 1}\n\n');
    expect(messages[0].data).toEqual({ a: 1 });
  });
});
