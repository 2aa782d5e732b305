// Browser shell: create or attach to a session, poll it, render, wire answers.
// All state lives in the service; reloading the page mid-session rebuilds the
// identical view from the GET endpoints.

import { ServiceError, SessionClient } from './api';
import { buildView, renderView, validateName } from './view';
import type { SessionState } from './types';

const POLL_INTERVAL_MS = 500;

interface AppOptions {
  base: string;
  mount: HTMLElement;
}

export class ReviewApp {
  private client: SessionClient;
  private sessionId: string | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private lastState: SessionState | null = null;

  constructor(private readonly options: AppOptions) {
    this.client = new SessionClient(options.base);
  }

  async start(seed: number, instance: number, policy: 'human' | 'abstain' | 'surrogate', stage: 'tables' | 'joint', config: Record<string, unknown>): Promise<void> {
    this.sessionId = await this.client.createSession({ seed, instance, policy, stage, config });
    const url = new URL(window.location.href);
    url.searchParams.set('session', this.sessionId);
    window.history.replaceState(null, '', url.toString());
    await this.refresh();
    this.schedule();
  }

  async attach(sessionId: string): Promise<void> {
    this.sessionId = sessionId;
    await this.refresh();
    this.schedule();
  }

  private schedule(): void {
    if (this.timer) {
      clearInterval(this.timer);
    }
    this.timer = setInterval(() => {
      void this.refresh();
    }, POLL_INTERVAL_MS);
  }

  private async refresh(): Promise<void> {
    if (!this.sessionId) {
      return;
    }
    const state = await this.client.getSession(this.sessionId);
    this.lastState = state;
    this.render(state);
    if ((state.status === 'done' || state.status === 'abstained') && this.timer) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  private render(state: SessionState): void {
    const view = buildView(state);
    this.options.mount.innerHTML = renderView(view);
    const prompt = this.options.mount.querySelector<HTMLElement>('.prompt');
    if (!prompt) {
      return;
    }
    const questionId = prompt.dataset.questionId ?? '';
    prompt.querySelectorAll<HTMLButtonElement>('button').forEach((button) => {
      button.addEventListener('click', () => {
        const raw = button.dataset.answer ?? '';
        if (raw !== '__input') {
          void this.submit(questionId, raw);
          return;
        }
        const input = prompt.querySelector<HTMLInputElement>('input');
        const value = input?.value ?? '';
        const kind = (prompt.dataset.kind ?? 'request_table') as
          | 'request_table'
          | 'request_column';
        const problem = this.lastState ? validateName(value, buildView(this.lastState), kind) : null;
        const validation = prompt.querySelector<HTMLElement>('.validation');
        if (problem && validation) {
          // inline validation; the service still enforces retry-then-abstain
          validation.textContent = problem;
          return;
        }
        void this.submit(questionId, value.trim());
      });
    });
  }

  private async submit(questionId: string, answer: string): Promise<void> {
    if (!this.sessionId) {
      return;
    }
    try {
      const state = await this.client.answer(this.sessionId, questionId, answer);
      this.lastState = state;
      this.render(state);
    } catch (error) {
      if (error instanceof ServiceError && error.status === 409) {
        // someone else answered first or the question went stale: re-sync, keep going
        await this.refresh();
        return;
      }
      throw error;
    }
  }
}

export function boot(): void {
  const mount = document.getElementById('app');
  if (!mount) {
    throw new Error('missing #app mount point');
  }
  const app = new ReviewApp({ base: '', mount });
  const params = new URLSearchParams(window.location.search);
  const existing = params.get('session');
  if (existing) {
    void app.attach(existing);
    return;
  }
  const form = document.getElementById('create-form') as HTMLFormElement | null;
  form?.addEventListener('submit', (event) => {
    event.preventDefault();
    const data = new FormData(form);
    void app.start(
      Number(data.get('seed') ?? 0),
      Number(data.get('instance') ?? 0),
      (data.get('policy') as 'human' | 'abstain' | 'surrogate') ?? 'human',
      (data.get('stage') as 'tables' | 'joint') ?? 'tables',
      { p_err: Number(data.get('p_err') ?? 0.1) },
    );
  });
}

declare global {
  interface Window {
    __linkguardBoot?: typeof boot;
  }
}

if (typeof window !== 'undefined' && typeof document !== 'undefined') {
  window.__linkguardBoot = boot;
  if (document.readyState !== 'loading') {
    boot();
  } else {
    document.addEventListener('DOMContentLoaded', boot);
  }
}
