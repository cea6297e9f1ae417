/** Session flow controller: fetch trials, render, submit decisions.
 *
 * Navigation is pessimistic: the next trial is requested only after the
 * service acknowledges the previous response, and a decision in flight
 * blocks further clicks so double-clicks cannot double-submit (the service
 * returns a conflict for any duplicate that slips through).
 */

import { ConflictError, NextResponse, StudyApi, TrialPayload } from "./api.js";
import { renderDone, renderTrial } from "./screen.js";

export class SessionController {
  private sessionId = "";
  private current: TrialPayload | null = null;
  private inFlight = false;
  private shownAt = 0;

  constructor(private readonly api: StudyApi,
              private readonly container: HTMLElement,
              private readonly doc: Document) {}

  async start(userId: string, studyId: string, method?: string): Promise<void> {
    const session = await this.api.createSession(userId, studyId, method);
    this.sessionId = session.session_id;
    await this.advance();
  }

  get trial(): TrialPayload | null {
    return this.current;
  }

  private async advance(): Promise<void> {
    const next: NextResponse = await this.api.nextTrial(this.sessionId);
    this.container.replaceChildren();
    if (next.kind === "session_done") {
      this.current = null;
      this.container.appendChild(renderDone(this.doc, next));
      return;
    }
    this.current = next;
    this.shownAt = Date.now();
    this.container.appendChild(renderTrial(
      this.doc, next, { onDecision: (accepted) => void this.decide(accepted) },
      (p) => this.api.assetUrl(p)));
  }

  async decide(accepted: boolean): Promise<void> {
    if (this.inFlight || !this.current) {
      return; // a decision is already on the wire
    }
    this.inFlight = true;
    try {
      await this.api.submitResponse(this.sessionId, this.current.trial_index,
                                    accepted, Date.now() - this.shownAt);
    } catch (err) {
      if (!(err instanceof ConflictError)) {
        throw err;
      }
      // duplicate reached the service anyway; the stored response stands
    } finally {
      this.inFlight = false;
    }
    await this.advance();
  }
}
