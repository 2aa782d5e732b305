// Wire types for the session service (see the service README for the contract).

export type SessionStatus = 'running' | 'awaiting_answer' | 'done' | 'abstained';

export type QuestionKind =
  | 'confirm_table'
  | 'confirm_column'
  | 'request_table'
  | 'request_column';

export interface PendingQuestion {
  question_id: string;
  kind: QuestionKind;
  subject: string | null;
  context: {
    question?: string;
    scope?: string | null;
    candidates?: string[];
    denied?: string[];
    linked_so_far?: string[];
    retry?: boolean;
  };
}

export interface SchemaTable {
  name: string;
  columns: string[];
}

export interface PartialLinking {
  tables: string[];
  suffix: string;
  columns: Record<string, string[]>;
  emitted: string;
}

export interface SessionResult {
  status: SessionStatus;
  tables: string[];
  columns: Record<string, string[]>;
  abstain_reason: string | null;
  corrections: number;
}

export interface SessionState {
  session_id: string;
  status: SessionStatus;
  pending_question: PendingQuestion | null;
  partial_linking: PartialLinking;
  question: string;
  schema: SchemaTable[];
  result?: SessionResult;
}

export interface CreateSessionRequest {
  seed: number;
  instance: number;
  policy: 'abstain' | 'surrogate' | 'human';
  stage?: 'tables' | 'joint';
  detector?: string | { path: string };
  config?: Record<string, unknown>;
}
