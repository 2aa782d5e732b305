// Pure view construction: service state in, renderable view out. Everything
// here is synchronous and side-effect free so it can be tested without a DOM;
// the browser layer only mounts the rendered strings and wires events.

import type { PendingQuestion, SessionState, SessionStatus } from './types';

export interface TranscriptLine {
  speaker: 'model' | 'operator' | 'surrogate';
  text: string;
}

export interface SchemaNodeView {
  table: string;
  columns: string[];
  linked: boolean;
  linkedColumns: string[];
  implicated: boolean; // part of the pending question's candidates
}

export interface PromptView {
  questionId: string;
  kind: PendingQuestion['kind'];
  mode: 'confirm' | 'request';
  text: string;
  subject: string | null;
  retry: boolean;
}

export interface SessionView {
  status: SessionStatus;
  question: string;
  schema: SchemaNodeView[];
  transcript: TranscriptLine[];
  prompt: PromptView | null;
  partialText: string;
  resultText: string | null;
  abstainDetail: string | null;
}

const kindNoun = (kind: PendingQuestion['kind']): string =>
  kind.endsWith('column') ? 'column' : 'table';

export function promptText(q: PendingQuestion, question: string): string {
  const noun = kindNoun(q.kind);
  if (q.kind.startsWith('confirm')) {
    const scope = q.context.scope ? ` of table "${q.context.scope}"` : '';
    return `Is the ${noun} "${q.subject}"${scope} relevant to the question: "${question}"?`;
  }
  const denied = (q.context.denied ?? []).join(', ') || 'none';
  const retry = q.context.retry ? ' That name was not in the schema; please try once more.' : '';
  return `None of the suggested ${noun}s (${denied}) were confirmed. Which ${noun} is correct?${retry}`;
}

export function buildTranscript(state: SessionState): TranscriptLine[] {
  const lines: TranscriptLine[] = [];
  const raw = (state as unknown as { transcript?: Array<Record<string, unknown>> }).transcript ?? [];
  for (const entry of raw) {
    if (entry.role === 'user') {
      const kind = String(entry.kind ?? '');
      const subject = entry.subject ? String(entry.subject) : '';
      const asked = kind.startsWith('confirm')
        ? `Is "${subject}" relevant?`
        : 'Please provide the correct name.';
      lines.push({ speaker: 'model', text: asked });
      lines.push({ speaker: 'operator', text: String(entry.answer ?? '') });
    } else if (entry.role === 'surrogate') {
      lines.push({
        speaker: 'surrogate',
        text: `"${String(entry.subject)}" relevant -> ${String(entry.verdict)}`,
      });
    }
  }
  if (state.pending_question) {
    lines.push({ speaker: 'model', text: promptText(state.pending_question, state.question) });
  }
  return lines;
}

export function buildView(state: SessionState): SessionView {
  const linkedTables = new Set(state.partial_linking.tables);
  const implicated = new Set(state.pending_question?.context.candidates ?? []);
  if (state.pending_question?.subject) {
    implicated.add(state.pending_question.subject);
  }
  const schema = state.schema.map((table) => ({
    table: table.name,
    columns: table.columns,
    linked: linkedTables.has(table.name),
    linkedColumns: state.partial_linking.columns[table.name] ?? [],
    implicated: implicated.has(table.name),
  }));
  let prompt: PromptView | null = null;
  if (state.status === 'awaiting_answer' && state.pending_question) {
    const q = state.pending_question;
    prompt = {
      questionId: q.question_id,
      kind: q.kind,
      mode: q.kind.startsWith('confirm') ? 'confirm' : 'request',
      text: promptText(q, state.question),
      subject: q.subject,
      retry: Boolean(q.context.retry),
    };
  }
  let resultText: string | null = null;
  let abstainDetail: string | null = null;
  if (state.status === 'done') {
    const tables = state.result?.tables ?? state.partial_linking.tables;
    resultText = `Linked tables: ${tables.join(', ') || '(none)'}`;
    const columns = state.result?.columns ?? {};
    const parts = Object.entries(columns).map(([t, cols]) => `${t}(${cols.join(', ')})`);
    if (parts.length) {
      resultText += ` | columns: ${parts.join('; ')}`;
    }
  } else if (state.status === 'abstained') {
    abstainDetail = state.result?.abstain_reason ?? 'abstained';
    const candidates = state.pending_question?.context.candidates ?? [];
    if (candidates.length) {
      abstainDetail += ` (candidates: ${candidates.join(', ')})`;
    }
  }
  return {
    status: state.status,
    question: state.question,
    schema,
    transcript: buildTranscript(state),
    prompt,
    partialText: state.partial_linking.emitted,
    resultText,
    abstainDetail,
  };
}

export function validateName(name: string, view: SessionView, kind: PendingQuestion['kind']): string | null {
  const trimmed = name.trim();
  if (!trimmed) {
    return 'enter a name';
  }
  if (kind === 'request_table') {
    return view.schema.some((t) => t.table === trimmed)
      ? null
      : `"${trimmed}" is not a table in this schema`;
  }
  return view.schema.some((t) => t.columns.includes(trimmed))
    ? null
    : `"${trimmed}" is not a column in this schema`;
}

// -- HTML rendering (string based; the browser shell mounts these) ------------

const escapeHtml = (value: string): string =>
  value
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');

export function renderSchema(view: SessionView): string {
  const rows = view.schema
    .map((node) => {
      const classes = ['table', node.linked ? 'linked' : '', node.implicated ? 'implicated' : '']
        .filter(Boolean)
        .join(' ');
      const columns = node.columns
        .map((column) => {
          const picked = node.linkedColumns.includes(column) ? ' class="linked"' : '';
          return `<li${picked}>${escapeHtml(column)}</li>`;
        })
        .join('');
      return `<details class="${classes}" open><summary>${escapeHtml(node.table)}</summary><ul>${columns}</ul></details>`;
    })
    .join('');
  return `<div class="schema">${rows}</div>`;
}

export function renderTranscript(view: SessionView): string {
  const lines = view.transcript
    .map((line) => `<div class="msg ${line.speaker}">${escapeHtml(line.text)}</div>`)
    .join('');
  return `<div class="transcript">${lines}</div>`;
}

export function renderPrompt(view: SessionView): string {
  if (!view.prompt) {
    return '';
  }
  const q = view.prompt;
  if (q.mode === 'confirm') {
    return (
      `<div class="prompt" data-question-id="${escapeHtml(q.questionId)}">` +
      `<p>${escapeHtml(q.text)}</p>` +
      `<button data-answer="yes">yes</button>` +
      `<button data-answer="no">no</button></div>`
    );
  }
  return (
    `<div class="prompt" data-question-id="${escapeHtml(q.questionId)}" data-kind="${q.kind}">` +
    `<p>${escapeHtml(q.text)}</p>` +
    `<input type="text" placeholder="name" />` +
    `<button data-answer="__input">send</button>` +
    `<span class="validation"></span></div>`
  );
}

export function renderStatus(view: SessionView): string {
  if (view.status === 'done') {
    return `<div class="status done">${escapeHtml(view.resultText ?? 'done')}</div>`;
  }
  if (view.status === 'abstained') {
    return `<div class="status abstained">abstained: ${escapeHtml(view.abstainDetail ?? '')}</div>`;
  }
  return `<div class="status ${view.status}">${view.status}</div>`;
}

export function renderView(view: SessionView): string {
  return (
    `<section class="question"><h2>${escapeHtml(view.question)}</h2></section>` +
    `<section class="partial">generated: <code>${escapeHtml(view.partialText)}</code></section>` +
    renderStatus(view) +
    renderSchema(view) +
    renderTranscript(view) +
    renderPrompt(view)
  );
}
