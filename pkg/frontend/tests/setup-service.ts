/** Spawns the real planning service for the integration tests. */

import { spawn, ChildProcess } from "node:child_process";

const PORT = 8471;
let child: ChildProcess | null = null;

async function waitReady(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await fetch(`http://127.0.0.1:${PORT}/scenarios`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service did not become ready");
    await new Promise((r) => setTimeout(r, 300));
  }
}

export async function setup(): Promise<void> {
  child = spawn("python3", ["-m", "prosper.cli", "serve", "--port", String(PORT)], {
    cwd: "..",
    stdio: "ignore",
  });
  await waitReady();
  process.env.PROSPER_SERVICE_URL = `http://127.0.0.1:${PORT}`;
}

export async function teardown(): Promise<void> {
  if (child) {
    child.kill("SIGTERM");
    child = null;
  }
}
