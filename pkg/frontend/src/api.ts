// Thin typed client over the session endpoints. The UI holds no state the
// service cannot reconstruct, so every view renders from these calls alone.

import type { CreateSessionRequest, SessionResult, SessionState } from './types';

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(`${base}${path}`, {
    headers: { 'Content-Type': 'application/json' },
    ...init,
  });
  if (!response.ok) {
    const body = await response.text();
    throw new ServiceError(response.status, body || response.statusText);
  }
  return response.json() as Promise<T>;
}

export class SessionClient {
  constructor(private readonly base: string) {}

  async createSession(payload: CreateSessionRequest): Promise<string> {
    const body = await request<{ session_id: string }>(this.base, '/sessions', {
      method: 'POST',
      body: JSON.stringify(payload),
    });
    return body.session_id;
  }

  getSession(id: string): Promise<SessionState> {
    return request<SessionState>(this.base, `/sessions/${id}`);
  }

  answer(id: string, questionId: string, answer: string): Promise<SessionState> {
    return request<SessionState>(this.base, `/sessions/${id}/answer`, {
      method: 'POST',
      body: JSON.stringify({ question_id: questionId, answer }),
    });
  }

  result(id: string): Promise<SessionResult> {
    return request<SessionResult>(this.base, `/sessions/${id}/result`);
  }
}
