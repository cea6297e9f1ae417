/** Browser bootstrap: read study parameters from the query string and run. */

import { StudyApi } from "./api.js";
import { SessionController } from "./session.js";

export async function boot(win: Window = window): Promise<SessionController> {
  const params = new URLSearchParams(win.location.search);
  const userId = params.get("user") ?? `user-${Math.random().toString(36).slice(2, 8)}`;
  const studyId = params.get("study") ?? "study1";
  const service = params.get("service") ?? "";
  const method = params.get("method") ?? undefined;

  const container = win.document.getElementById("app");
  if (!container) {
    throw new Error("missing #app container");
  }
  const controller = new SessionController(new StudyApi(service),
                                           container, win.document);
  await controller.start(userId, studyId, method);
  return controller;
}

declare global {
  interface Window { __corrxaiBooted?: Promise<SessionController> }
}

// auto-boot only on a real page carrying the app container
if (typeof window !== "undefined" && window.document?.getElementById("app")) {
  window.__corrxaiBooted = boot();
}
