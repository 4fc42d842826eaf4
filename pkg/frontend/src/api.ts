// Typed /v1 client. Every request is checked against the endpoint
// allowlist below, so the UI can only ever speak the documented API.

import type {
  ApiSession,
  CreateSessionResponse,
  DiagnosisReport,
  SensorStats,
  TurnResult,
} from './types.js';

export const ALLOWED_ENDPOINTS: ReadonlyArray<{ method: string; pattern: RegExp }> = [
  { method: 'POST', pattern: /^\/v1\/sessions$/ },
  { method: 'POST', pattern: /^\/v1\/sessions\/[^/]+\/messages$/ },
  { method: 'GET', pattern: /^\/v1\/sessions\/[^/]+$/ },
  { method: 'POST', pattern: /^\/v1\/sessions\/[^/]+\/finalize$/ },
  { method: 'POST', pattern: /^\/v1\/patients\/[^/]+\/consent$/ },
  { method: 'GET', pattern: /^\/v1\/patients\/[^/]+\/sensors\/stats$/ },
  { method: 'GET', pattern: /^\/v1\/health$/ },
];

export function isAllowed(method: string, path: string): boolean {
  return ALLOWED_ENDPOINTS.some(
    (e) => e.method === method && e.pattern.test(path),
  );
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public kind: string,
    detail: string,
  ) {
    super(detail);
  }

  get retryable(): boolean {
    return this.status === 502;
  }

  get inFlight(): boolean {
    return this.status === 429;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = '',
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    if (!isAllowed(method, path)) {
      throw new Error(`endpoint not in the documented /v1 surface: ${method} ${path}`);
    }
    const init: RequestInit = { method, headers: { 'Content-Type': 'application/json' } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const payload = await resp.json();
    if (!resp.ok) {
      const err = payload?.error ?? {};
      throw new ApiError(resp.status, err.type ?? 'unknown', err.detail ?? resp.statusText);
    }
    return payload as T;
  }

  createSession(patientId: string, firstSymptoms: string, demographics?: object) {
    return this.request<CreateSessionResponse>('POST', '/v1/sessions', {
      patient_id: patientId,
      first_symptoms: firstSymptoms,
      demographics,
    });
  }

  sendMessage(sessionId: string, text: string) {
    return this.request<TurnResult>('POST', `/v1/sessions/${sessionId}/messages`, { text });
  }

  getSession(sessionId: string) {
    return this.request<{ session: ApiSession; transcript: unknown }>(
      'GET',
      `/v1/sessions/${sessionId}`,
    );
  }

  finalize(sessionId: string) {
    return this.request<DiagnosisReport>('POST', `/v1/sessions/${sessionId}/finalize`);
  }

  setConsent(patientId: string, allow: boolean) {
    return this.request<{ patient_id: string; consent: boolean }>(
      'POST',
      `/v1/patients/${patientId}/consent`,
      { allow },
    );
  }

  sensorStats(patientId: string) {
    return this.request<SensorStats>('GET', `/v1/patients/${patientId}/sensors/stats`);
  }

  health() {
    return this.request<{ status: string; version: string }>('GET', '/v1/health');
  }
}
