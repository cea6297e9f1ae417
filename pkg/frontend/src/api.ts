/** Typed client for the study service endpoints. */

export interface BoxDoc {
  q: [number, number];
  s: [number, number];
  score: number;
}

export interface SupportDoc {
  image_id: string;
  rank: number;
  boxes?: BoxDoc[];
}

export interface ExplanationDoc {
  query_id: string;
  method: string;
  label: number;
  label_name: string;
  confidence_percent: number;
  grid: number;
  supports: SupportDoc[];
}

export interface ClassIntro {
  label: number;
  label_name: string;
  description: string;
  reference_images: string[];
}

export interface TrialPayload {
  kind: "trial";
  session_id: string;
  phase: "training" | "validation" | "test";
  trial_index: number;
  trial_count: number;
  method: string;
  query_id: string;
  asset_url: string;
  class_intro: ClassIntro;
  explanation: ExplanationDoc;
}

export interface SessionDoneMarker {
  kind: "session_done";
  session_id: string;
  rejected: boolean;
  scores: Record<string, number>;
  test_accuracy?: number;
}

export type NextResponse = TrialPayload | SessionDoneMarker;

export interface SessionInfo {
  session_id: string;
  user_id: string;
  study_id: string;
  method: string;
  phase: string;
  trial_index: number;
}

export interface SubmitAck {
  session_id: string;
  phase: string;
  next_trial_index: number | null;
  done: boolean;
}

export class ConflictError extends Error {}

export class StudyApi {
  constructor(private readonly baseUrl: string,
              private readonly fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (response.status === 409) {
      throw new ConflictError(await response.text());
    }
    if (!response.ok) {
      throw new Error(`${path}: HTTP ${response.status} ${await response.text()}`);
    }
    return (await response.json()) as T;
  }

  createSession(userId: string, studyId: string, method?: string): Promise<SessionInfo> {
    return this.request<SessionInfo>("/sessions", {
      method: "POST",
      body: JSON.stringify({ user_id: userId, study_id: studyId, method }),
    });
  }

  nextTrial(sessionId: string): Promise<NextResponse> {
    return this.request<NextResponse>(`/sessions/${sessionId}/next`);
  }

  submitResponse(sessionId: string, trialIndex: number, accepted: boolean,
                 elapsedMs: number): Promise<SubmitAck> {
    return this.request<SubmitAck>(`/sessions/${sessionId}/responses`, {
      method: "POST",
      body: JSON.stringify({
        trial_index: trialIndex,
        accepted,
        elapsed_ms: Math.round(elapsedMs),
      }),
    });
  }

  assetUrl(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
