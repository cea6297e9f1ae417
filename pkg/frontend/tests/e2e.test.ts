/** Scripted end-to-end session against the real study service:
 * training -> validation at 100% -> 30 test trials, with a duplicate click
 * along the way and a confidence-rendering check.
 *
 * The page origin is pinned to the service origin below (happy-dom enforces
 * the same-origin policy); the service also sends permissive CORS headers.
 *
 * @vitest-environment happy-dom
 * @vitest-environment-options { "url": "http://127.0.0.1:8971" }
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { StudyApi } from "../src/api.js";
import { SessionController } from "../src/session.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const PYTHON = process.env.PYTHON ?? "python3";
const PORT = 8971; // must match the @vitest-environment-options url above
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let dataDir: string;
let plan: any;

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const r = await fetch(`${BASE}/studies/e2e/results`);
      if (r.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("study service did not come up");
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "corrxai-e2e-"));
  const built = spawnSync(PYTHON, [join(HERE, "helpers", "make_study.py"), dataDir],
                          { encoding: "utf-8" });
  if (built.status !== 0) {
    throw new Error(`make_study failed: ${built.stderr}`);
  }
  plan = JSON.parse(readFileSync(join(dataDir, "studies", "e2e", "plan.json"), "utf-8"));
  server = spawn(PYTHON, ["-c", [
    "import sys, uvicorn",
    "from corrxai.service import create_app",
    `uvicorn.run(create_app(sys.argv[1]), host='127.0.0.1', port=${PORT}, log_level='warning')`,
  ].join("\n"), dataDir], { stdio: ["ignore", "pipe", "pipe"] });
  await waitForServer();
});

afterAll(() => {
  server?.kill();
});

describe("scripted browser session", () => {
  it("completes training, a perfect validation, and 30 test trials", async () => {
    document.body.innerHTML = "<div id='app'></div>";
    const container = document.getElementById("app") as HTMLElement;
    const api = new StudyApi(BASE, globalThis.fetch.bind(globalThis) as typeof fetch);
    const controller = new SessionController(api, container, document);
    await controller.start("e2e-user", "e2e", "knn");

    const validationTruth: boolean[] =
      plan.validation.knn.map((t: any) => Boolean(t.ai_correct));
    const phasesSeen: string[] = [];
    let sawTenPercent = false;
    let duplicateClicked = false;
    let guard = 0;

    while (controller.trial && guard++ < 100) {
      const trial = controller.trial;
      phasesSeen.push(trial.phase);
      const screen = container.querySelector(".trial-screen") as HTMLElement;
      expect(screen.dataset.trialIndex).toBe(String(trial.trial_index));
      if (container.querySelector(".confidence")?.textContent === "10%") {
        sawTenPercent = true;
      }

      if (trial.phase === "validation") {
        await controller.decide(validationTruth[trial.trial_index]);
      } else if (trial.phase === "test" && trial.trial_index === 3 && !duplicateClicked) {
        duplicateClicked = true;
        const yes = container.querySelector(".decision-yes") as HTMLButtonElement;
        yes.click();
        yes.click(); // rapid double-click
        for (let i = 0; i < 50 && controller.trial?.trial_index === 3; i++) {
          await new Promise((resolve) => setTimeout(resolve, 50));
        }
      } else {
        await controller.decide(true);
      }
    }

    expect(phasesSeen.filter((p) => p === "training").length).toBe(5);
    expect(phasesSeen.filter((p) => p === "validation").length).toBe(10);
    expect(phasesSeen.filter((p) => p === "test").length).toBe(30);
    expect(duplicateClicked).toBe(true);
    expect(sawTenPercent).toBe(true);
    expect(container.querySelector(".completion-screen")).not.toBeNull();

    // the duplicate click stored exactly one response: 30 rows, one per trial
    const results = await (await fetch(`${BASE}/studies/e2e/results`)).json();
    const mine = results.rows.filter((r: any) => r.user_id === "e2e-user");
    expect(mine.length).toBe(30);
    const byQuery = new Set(mine.map((r: any) => r.query_id));
    expect(byQuery.size).toBe(30);
    expect(results.per_user["e2e-user"]).toBeGreaterThan(0);
  });

  it("server-side gate rejects an imperfect validation", async () => {
    document.body.innerHTML = "<div id='app'></div>";
    const container = document.getElementById("app") as HTMLElement;
    const api = new StudyApi(BASE, globalThis.fetch.bind(globalThis) as typeof fetch);
    const controller = new SessionController(api, container, document);
    await controller.start("clumsy-user", "e2e", "knn");

    const validationTruth: boolean[] =
      plan.validation.knn.map((t: any) => Boolean(t.ai_correct));
    let guard = 0;
    while (controller.trial && guard++ < 40) {
      const trial = controller.trial;
      if (trial.phase === "validation") {
        // one deliberate mistake on the last validation trial
        const truth = validationTruth[trial.trial_index];
        await controller.decide(trial.trial_index === 9 ? !truth : truth);
      } else {
        await controller.decide(true);
      }
    }
    expect(container.querySelector(".rejection-screen")).not.toBeNull();
    const results = await (await fetch(`${BASE}/studies/e2e/results`)).json();
    expect(results.rows.filter((r: any) => r.user_id === "clumsy-user").length).toBe(0);
  });
});
