/** DOM renderers for the trial flow: class intro, trial screen with
 * correspondence overlays, and the terminal phase screens. */

import { SessionDoneMarker, SupportDoc, TrialPayload } from "./api.js";
import { cellToRect, pairColor } from "./boxes.js";

export const DISPLAY_SIZE = 224; // rendered image edge, px

export interface TrialHandlers {
  onDecision: (accepted: boolean) => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
    doc: Document, tag: K, className?: string): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  return node;
}

function overlayBoxes(doc: Document, frame: HTMLElement,
                      cells: Array<[number, number]>, grid: number): void {
  cells.forEach(([row, col], rank) => {
    const rect = cellToRect(row, col, grid, DISPLAY_SIZE, DISPLAY_SIZE);
    const box = el(doc, "div", "corr-box");
    box.style.position = "absolute";
    box.style.left = `${rect.left}px`;
    box.style.top = `${rect.top}px`;
    box.style.width = `${rect.width}px`;
    box.style.height = `${rect.height}px`;
    box.style.border = `3px solid ${pairColor(rank)}`;
    box.style.pointerEvents = "none";
    frame.appendChild(box);
  });
}

function imageFrame(doc: Document, src: string, className: string): HTMLElement {
  const frame = el(doc, "div", className);
  frame.style.position = "relative";
  frame.style.width = `${DISPLAY_SIZE}px`;
  frame.style.height = `${DISPLAY_SIZE}px`;
  const img = el(doc, "img");
  img.src = src;
  img.width = DISPLAY_SIZE;
  img.height = DISPLAY_SIZE;
  frame.appendChild(img);
  return frame;
}

function renderQueryOverlay(doc: Document, queryFrame: HTMLElement,
                            support: SupportDoc | undefined, grid: number): void {
  queryFrame.querySelectorAll(".corr-box").forEach((b) => b.remove());
  if (support?.boxes) {
    overlayBoxes(doc, queryFrame, support.boxes.map((b) => b.q), grid);
  }
}

/** Render one trial; returns the root node (caller attaches it). */
export function renderTrial(doc: Document, payload: TrialPayload,
                            handlers: TrialHandlers,
                            assetUrl: (path: string) => string = (p) => p): HTMLElement {
  const root = el(doc, "div", "trial-screen");
  root.dataset.phase = payload.phase;
  root.dataset.trialIndex = String(payload.trial_index);

  const intro = el(doc, "div", "class-intro");
  const title = el(doc, "h2");
  title.textContent = payload.class_intro.label_name;
  intro.appendChild(title);
  if (payload.class_intro.description) {
    const desc = el(doc, "p", "class-description");
    desc.textContent = payload.class_intro.description;
    intro.appendChild(desc);
  }
  const refs = el(doc, "div", "class-references");
  for (const refId of payload.class_intro.reference_images) {
    const img = el(doc, "img", "class-reference");
    img.src = assetUrl(`/assets/${refId}`);
    img.width = 96;
    img.height = 96;
    refs.appendChild(img);
  }
  intro.appendChild(refs);
  root.appendChild(intro);

  const banner = el(doc, "div", "prediction-banner");
  const label = el(doc, "span", "predicted-label");
  label.textContent = payload.explanation.label_name;
  const confidence = el(doc, "span", "confidence");
  confidence.textContent = `${payload.explanation.confidence_percent}%`;
  banner.append(label, doc.createTextNode(" — confidence "), confidence);
  root.appendChild(banner);

  const panel = el(doc, "div", "panel");
  const grid = payload.explanation.grid;
  const queryFrame = imageFrame(doc, assetUrl(payload.asset_url), "query-frame");
  panel.appendChild(queryFrame);

  const supportsRow = el(doc, "div", "supports-row");
  const supports = payload.explanation.supports;
  supports.forEach((support, idx) => {
    const card = el(doc, "div", "support-card");
    card.dataset.imageId = support.image_id;
    const frame = imageFrame(doc, assetUrl(`/assets/${support.image_id}`),
                             "support-frame");
    if (support.boxes) {
      overlayBoxes(doc, frame, support.boxes.map((b) => b.s), grid);
    }
    card.appendChild(frame);
    card.addEventListener("mouseenter", () =>
      renderQueryOverlay(doc, queryFrame, support, grid));
    supportsRow.appendChild(card);
    if (idx === 0) {
      renderQueryOverlay(doc, queryFrame, support, grid);
    }
  });
  panel.appendChild(supportsRow);
  root.appendChild(panel);

  const controls = el(doc, "div", "controls");
  const prompt = el(doc, "p", "prompt");
  prompt.textContent = "Is the AI's predicted label correct?";
  controls.appendChild(prompt);
  const yes = el(doc, "button", "decision-yes");
  yes.textContent = "Yes";
  const no = el(doc, "button", "decision-no");
  no.textContent = "No";
  yes.addEventListener("click", () => handlers.onDecision(true));
  no.addEventListener("click", () => handlers.onDecision(false));
  controls.append(yes, no);
  root.appendChild(controls);
  return root;
}

export function renderDone(doc: Document, marker: SessionDoneMarker): HTMLElement {
  const root = el(doc, "div",
                  marker.rejected ? "rejection-screen" : "completion-screen");
  const heading = el(doc, "h2");
  if (marker.rejected) {
    heading.textContent = "Validation not passed";
    const note = el(doc, "p");
    note.textContent =
      "A perfect validation score is required to continue to the test phase.";
    root.append(heading, note);
  } else {
    heading.textContent = "Session complete";
    root.appendChild(heading);
    if (marker.test_accuracy !== undefined && marker.test_accuracy !== null) {
      const score = el(doc, "p", "own-accuracy");
      score.textContent =
        `Your accuracy: ${(100 * marker.test_accuracy).toFixed(1)}%`;
      root.appendChild(score);
    }
  }
  return root;
}
