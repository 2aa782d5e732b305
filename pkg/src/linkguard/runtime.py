"""Constrained schema-linking generation with per-token branch detection.

A stage generates one separator-delimited list of names (tables, or the
columns of one confirmed table) under a detector. When the detector fires,
the flagged token is traced back to the names it implicates by decoding the
stream before and after the flag and differencing, and the configured policy
resolves the fire: abstain outright, consult a surrogate relevance filter, or
ask a human. Human sessions can park awaiting an answer, which is how the
HTTP service drives them; the in-process policy runners use the very same
machine, so both paths behave identically given the same answers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .catalog import Namespace, SchemaCatalog
from .traces import StepOutput

STATUS_RUNNING = "running"
STATUS_AWAITING = "awaiting_answer"
STATUS_DONE = "done"
STATUS_ABSTAINED = "abstained"

POLICIES = ("abstain", "surrogate", "human")


class SessionError(RuntimeError):
    """The generation loop or trace-back failed mid-session."""


class AnswerConflictError(RuntimeError):
    """An answer arrived for a question that is not pending."""


class InvalidAnswerError(ValueError):
    """A pending question received an answer outside its accepted values."""


class Responder(Protocol):
    """A human (or stand-in) that confirms relevance and supplies correct names."""

    def relevance(self, kind: str, subject: str, context: dict) -> str: ...  # "yes" | "no"

    def provide(self, kind: str, context: dict) -> str: ...  # a catalog name


class SurrogateFilter(Protocol):
    """A relevance classifier standing in for a human; verdicts are "True"/"False"."""

    def relevance(self, subject: str, question: str, kind: str) -> str: ...


# -- decoding ------------------------------------------------------------------


@dataclass(frozen=True)
class DecodeResult:
    names: list[str]  # unique, in decode order
    suffix_text: str
    suffix_tokens: list[int]

    @property
    def name_set(self) -> frozenset[str]:
        return frozenset(self.names)


def decode(tokens: Sequence[int], namespace: Namespace) -> DecodeResult:
    """Greedy longest-match decoding of a token stream into names plus a suffix.

    Separator and eos tokens delimit; maximal trie walks that end exactly on a
    name commit that name. A trailing walk that stops mid-trie stays an
    undecoded suffix even if it passed a shorter complete name, since the
    stream may still be extending the longer one.
    """
    sep = namespace.separator_id
    eos = namespace.eos_id
    root = namespace.trie.root
    names: list[str] = []

    def push(name: str) -> None:
        if name not in names:
            names.append(name)

    tokens = list(tokens)
    i, n = 0, len(tokens)
    while i < n:
        if tokens[i] == sep or tokens[i] == eos:
            i += 1
            continue
        node = root
        j = i
        last_end: tuple[int, str] | None = None
        while j < n:
            child = node.children.get(tokens[j])
            if child is None:
                break
            node = child
            j += 1
            if node.name is not None:
                last_end = (j, node.name)
        if j == n and node is not root:
            if node.name is not None:
                push(node.name)
                i = j
                continue
            tail = tokens[i:]
            return DecodeResult(names, namespace.catalog.text_of(tail), tail)
        if last_end is not None:
            push(last_end[1])
            i = last_end[0]
            continue
        tail = tokens[i:]
        return DecodeResult(names, namespace.catalog.text_of(tail), tail)
    return DecodeResult(names, "", [])


# -- trace-back ----------------------------------------------------------------


@dataclass(frozen=True)
class TraceBackResult:
    candidates: list[str]  # implicated names, catalog order
    tokens: list[int]  # stream after any continuation steps
    steps: list[StepOutput]
    hit_eos: bool


def trace_back(
    branch_token: int,
    tokens: Sequence[int],
    namespace: Namespace,
    model,
    max_steps: int = 64,
) -> TraceBackResult:
    """Map a flagged token to the names it implicates.

    Decodes the stream with and without the flagged token; while the
    difference is empty, the model keeps generating. If it reaches eos before
    a new name appears, the last decoded name takes the blame.
    """
    tokens = list(tokens)
    if not tokens or tokens[-1] != branch_token:
        raise ValueError("the flagged token must be the last element of the stream")
    pre = decode(tokens[:-1], namespace).name_set
    order = {name: pos for pos, name in enumerate(namespace.names)}
    steps: list[StepOutput] = []
    work = tokens
    while True:
        after = decode(work, namespace)
        diff = [name for name in after.names if name not in pre]
        if diff:
            diff.sort(key=order.__getitem__)
            return TraceBackResult(diff, work, steps, False)
        if len(steps) >= max_steps:
            raise SessionError(f"trace-back exceeded {max_steps} continuation steps")
        out = model.step(work)
        if int(out.token) == namespace.eos_id:
            return TraceBackResult(after.names[-1:], work, steps, True)
        work = work + [int(out.token)]
        steps.append(out)


# -- session state -------------------------------------------------------------


@dataclass(frozen=True)
class Question:
    question_id: str
    kind: str  # confirm_table | confirm_column | request_table | request_column
    subject: str | None
    context: dict


@dataclass
class TokenRecord:
    token: int
    fired: bool = False
    forced: bool = False


@dataclass
class LinkingSession:
    """Observable state of one linking stage."""

    namespace: Namespace
    question: str
    tokens: list[int] = field(default_factory=list)
    records: list[TokenRecord] = field(default_factory=list)
    status: str = STATUS_RUNNING
    pending: Question | None = None
    linked: list[str] = field(default_factory=list)
    correction_count: int = 0
    abstain_reason: str | None = None
    transcript: list[dict] = field(default_factory=list)

    @property
    def decoded(self) -> DecodeResult:
        return decode(self.tokens, self.namespace)

    def emitted_text(self) -> str:
        return self.namespace.catalog.text_of(self.tokens)


def _finalize(session: LinkingSession, status: str, reason: str | None = None) -> None:
    if session.status in (STATUS_DONE, STATUS_ABSTAINED):
        raise SessionError(f"session already terminal ({session.status})")
    session.status = status
    session.pending = None
    session.abstain_reason = reason
    if status == STATUS_DONE:
        session.linked = decode(session.tokens, session.namespace).names


class StageRunner:
    """Drives one stage (tables, or one table's columns) under a policy."""

    def __init__(
        self,
        model,
        detector,
        namespace: Namespace,
        policy: str,
        *,
        kind: str = "table",  # question kinds become confirm_<kind> / request_<kind>
        scope: str | None = None,  # owning table name for column stages
        surrogate: SurrogateFilter | None = None,
        question: str = "",
        max_steps: int | None = None,
    ) -> None:
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.model = model
        self.detector = detector
        self.policy = policy
        self.kind = kind
        self.scope = scope
        self.surrogate = surrogate
        self.session = LinkingSession(namespace, question)
        if max_steps is None:
            ns = namespace
            name_tokens = sum(len(ns.tokenize(n)) for n in ns.names)
            max_steps = 4 * (name_tokens + len(ns.names) + 1) + 16
        self.max_steps = max_steps
        self._qcounter = itertools.count(1)
        self._candidates: list[str] = []
        self._candidate_pos = 0
        self._fire_pos = -1
        self._retry_used = False
        self._max_corrections = 8 + 4 * len(namespace.names)

    # -- driving ----------------------------------------------------------

    def run(self) -> str:
        """Advance until the stage parks on a question or reaches a terminal state."""
        session = self.session
        eos = session.namespace.eos_id
        while session.status == STATUS_RUNNING:
            if session.tokens and session.tokens[-1] == eos:
                # an eos whose fire was resolved by "continue" stands as final
                _finalize(session, STATUS_DONE)
                break
            if len(session.tokens) >= self.max_steps:
                raise SessionError(f"generation exceeded {self.max_steps} steps")
            out = self.model.step(session.tokens)
            token = int(out.token)
            session.tokens.append(token)
            record = TokenRecord(token)
            session.records.append(record)
            decision = self.detector.decide(
                len(session.tokens) - 1, session.tokens[:-1], token, out.hidden
            )
            if decision.fire:
                record.fired = True
                self._handle_fire(len(session.tokens) - 1)
            elif token == eos:
                _finalize(session, STATUS_DONE)
        return session.status

    def _handle_fire(self, position: int) -> None:
        session = self.session
        if self.policy == "abstain":
            _finalize(
                session, STATUS_ABSTAINED, f"branch detected at position {position}"
            )
            return
        if session.correction_count >= self._max_corrections:
            _finalize(session, STATUS_ABSTAINED, "correction budget exhausted")
            return

        result = trace_back(
            session.tokens[position],
            session.tokens,
            session.namespace,
            self.model,
        )
        # continuation tokens emitted while locating the name join the stream
        extension = result.tokens[len(session.tokens) :]
        session.tokens.extend(extension)
        session.records.extend(TokenRecord(t) for t in extension)
        self._fire_pos = position
        self._candidates = result.candidates
        self._candidate_pos = 0
        self._retry_used = False

        if self.policy == "surrogate":
            self._resolve_with_surrogate()
        else:
            self._ask_next()

    def _resolve_with_surrogate(self) -> None:
        session = self.session
        if self.surrogate is None:
            _finalize(session, STATUS_ABSTAINED, "surrogate unavailable")
            return
        verdicts = []
        for name in self._candidates:
            try:
                verdict = self.surrogate.relevance(name, session.question, self.kind, self.scope)
            except Exception as exc:  # surrogate failure -> abstain with note
                _finalize(session, STATUS_ABSTAINED, f"surrogate error: {exc}")
                return
            verdicts.append(verdict)
            session.transcript.append(
                {"role": "surrogate", "subject": name, "verdict": verdict}
            )
        if any(v == "True" for v in verdicts):
            session.correction_count += 1  # fire resolved, generation continues
            return
        _finalize(
            session,
            STATUS_ABSTAINED,
            f"surrogate confirmed irrelevance of {self._candidates}",
        )

    # -- human interaction --------------------------------------------------

    def _ask_next(self) -> None:
        session = self.session
        if self._candidate_pos < len(self._candidates):
            subject = self._candidates[self._candidate_pos]
            self._set_pending(
                f"confirm_{self.kind}",
                subject,
                {
                    "question": session.question,
                    "scope": self.scope,
                    "candidates": list(self._candidates),
                    "linked_so_far": session.decoded.names,
                },
            )
        else:
            self._set_pending(
                f"request_{self.kind}",
                None,
                {
                    "question": session.question,
                    "scope": self.scope,
                    "denied": list(self._candidates),
                    "linked_so_far": decode(
                        session.tokens[: self._fire_pos], session.namespace
                    ).names,
                    "retry": self._retry_used,
                },
            )

    def _set_pending(self, kind: str, subject: str | None, context: dict) -> None:
        session = self.session
        session.pending = Question(f"q{next(self._qcounter)}", kind, subject, context)
        session.status = STATUS_AWAITING

    def submit(self, question_id: str, answer: str) -> str:
        """Apply an answer to the pending question, then keep driving."""
        session = self.session
        if session.pending is None or session.status != STATUS_AWAITING:
            raise AnswerConflictError("no question is pending")
        if session.pending.question_id != question_id:
            raise AnswerConflictError(
                f"question {question_id!r} is not pending (expected {session.pending.question_id!r})"
            )
        question = session.pending
        session.transcript.append(
            {"role": "user", "question_id": question_id, "kind": question.kind,
             "subject": question.subject, "answer": answer}
        )
        if question.kind.startswith("confirm_"):
            self._apply_confirm(answer)
        else:
            self._apply_request(answer)
        if session.status == STATUS_RUNNING:
            return self.run()
        return session.status

    def _apply_confirm(self, answer: str) -> None:
        session = self.session
        if answer not in ("yes", "no"):
            raise InvalidAnswerError(f"confirm answers must be 'yes' or 'no', got {answer!r}")
        session.pending = None
        if answer == "yes":
            session.correction_count += 1
            session.status = STATUS_RUNNING  # affirmed: the emitted name stands
        else:
            self._candidate_pos += 1
            self._ask_next()

    def _apply_request(self, answer: str) -> None:
        session = self.session
        session.pending = None
        if answer not in session.namespace.names:
            if self._retry_used:
                _finalize(
                    session,
                    STATUS_ABSTAINED,
                    f"no valid {self.kind} name provided (got {answer!r})",
                )
                return
            self._retry_used = True
            self._ask_next()
            return
        # teacher forcing: replace the in-progress name with the provided one
        boundary = 0
        sep = session.namespace.separator_id
        for idx in range(self._fire_pos - 1, -1, -1):
            if session.tokens[idx] == sep:
                boundary = idx + 1
                break
        forced = session.namespace.tokenize(answer)
        del session.tokens[boundary:]
        del session.records[boundary:]
        session.tokens.extend(forced)
        session.records.extend(TokenRecord(t, forced=True) for t in forced)
        session.correction_count += 1
        session.status = STATUS_RUNNING


# -- joint (tables then columns) runs -------------------------------------------


ColumnStageFactory = Callable[[str], tuple[object, Namespace]]


@dataclass
class JointOutcome:
    status: str
    tables: list[str]
    columns: dict[str, list[str]]
    table_session: LinkingSession
    column_sessions: dict[str, LinkingSession]
    abstain_reason: str | None = None


class LinkRun:
    """Sequences the table stage and optional per-table column stages.

    The same object backs in-process policy runs and service-driven sessions;
    `start`/`submit` park on questions, `outcome` reads the joint result.
    """

    def __init__(
        self,
        table_model,
        table_detector,
        catalog: SchemaCatalog,
        policy: str,
        *,
        column_factory: ColumnStageFactory | None = None,
        column_detector=None,
        surrogate: SurrogateFilter | None = None,
        question: str = "",
        link_columns: bool = False,
    ) -> None:
        self.catalog = catalog
        self.policy = policy
        self.surrogate = surrogate
        self.question = question
        self.link_columns = link_columns
        self.column_factory = column_factory
        self.column_detector = column_detector
        self._table_runner = StageRunner(
            table_model,
            table_detector,
            catalog.table_namespace(),
            policy,
            kind="table",
            surrogate=surrogate,
            question=question,
        )
        self._column_runners: dict[str, StageRunner] = {}
        self._column_order: list[str] = []
        self._column_pos = 0
        self._active: StageRunner = self._table_runner
        self._started = False

    # -- state ------------------------------------------------------------

    @property
    def table_session(self) -> LinkingSession:
        return self._table_runner.session

    @property
    def status(self) -> str:
        table = self._table_runner.session
        if table.status in (STATUS_RUNNING, STATUS_AWAITING):
            return table.status
        if table.status == STATUS_ABSTAINED:
            return STATUS_ABSTAINED
        if not self.link_columns:
            return table.status
        if any(r.session.status == STATUS_ABSTAINED for r in self._column_runners.values()):
            return STATUS_ABSTAINED
        if self._active.session.status == STATUS_AWAITING:
            return STATUS_AWAITING
        if self._column_pos < len(self._column_order):
            return STATUS_RUNNING
        return STATUS_DONE

    @property
    def pending(self) -> Question | None:
        return self._active.session.pending

    def partial(self) -> dict:
        table = self._table_runner.session
        decoded = table.decoded
        return {
            "tables": table.linked if table.status == STATUS_DONE else decoded.names,
            "suffix": decoded.suffix_text,
            "columns": {
                name: runner.session.linked
                for name, runner in self._column_runners.items()
                if runner.session.status == STATUS_DONE
            },
            "emitted": table.emitted_text(),
        }

    def outcome(self) -> JointOutcome:
        table = self._table_runner.session
        reason = table.abstain_reason
        for runner in self._column_runners.values():
            if runner.session.abstain_reason and reason is None:
                reason = runner.session.abstain_reason
        return JointOutcome(
            status=self.status,
            tables=list(table.linked),
            columns={
                name: list(runner.session.linked)
                for name, runner in self._column_runners.items()
            },
            table_session=table,
            column_sessions={n: r.session for n, r in self._column_runners.items()},
            abstain_reason=reason,
        )

    # -- driving ----------------------------------------------------------

    def start(self) -> str:
        if self._started:
            raise SessionError("run already started")
        self._started = True
        self._table_runner.run()
        return self._advance()

    def submit(self, question_id: str, answer: str) -> str:
        self._active.submit(question_id, answer)
        return self._advance()

    def _advance(self) -> str:
        while True:
            status = self._active.session.status
            if status in (STATUS_AWAITING, STATUS_ABSTAINED):
                return self.status
            if self._active is self._table_runner:
                if not self.link_columns:
                    return self.status
                self._column_order = list(self._table_runner.session.linked)
                self._column_pos = 0
            else:
                self._column_pos += 1
            if self._column_pos >= len(self._column_order):
                return self.status
            table_name = self._column_order[self._column_pos]
            if table_name not in self._column_runners:
                if self.column_factory is None:
                    raise SessionError("column stage requested without a column factory")
                model, namespace = self.column_factory(table_name)
                detector = self.column_detector
                if detector is None:
                    detector = NeverDetector()
                elif not hasattr(detector, "decide") and callable(detector):
                    detector = detector(table_name, model)  # per-stage detector factory
                self._column_runners[table_name] = StageRunner(
                    model,
                    detector,
                    namespace,
                    self.policy,
                    kind="column",
                    scope=table_name,
                    surrogate=self.surrogate,
                    question=self.question,
                )
            self._active = self._column_runners[table_name]
            self._active.run()


class NeverDetector:
    def decide(self, step_index, prefix, token, hidden):
        from .detector import DetectorDecision

        return DetectorDecision(False, (frozenset({0}),), frozenset({0}))


# -- policy runners --------------------------------------------------------------


def drive_with_responder(run: LinkRun, responder: Responder | None) -> None:
    status = run.start()
    while status == STATUS_AWAITING:
        q = run.pending
        assert q is not None
        if responder is None:
            raise SessionError("session asked a question but no responder is attached")
        if q.kind.startswith("confirm_"):
            answer = responder.relevance(q.kind, q.subject or "", q.context)
        else:
            answer = responder.provide(q.kind, q.context)
        status = run.submit(q.question_id, answer)


def run_policy_abstain(model, detector, catalog: SchemaCatalog, question: str = "") -> LinkingSession:
    """Generate to eos, abstaining on the first detector fire."""
    run = LinkRun(model, detector, catalog, "abstain", question=question)
    run.start()
    return run.table_session


def run_policy_surrogate(
    model, detector, surrogate: SurrogateFilter, catalog: SchemaCatalog, question: str = ""
) -> LinkingSession:
    """Resolve fires through the surrogate filter; abstain only on denied relevance."""
    run = LinkRun(model, detector, catalog, "surrogate", surrogate=surrogate, question=question)
    run.start()
    return run.table_session


def run_policy_human(
    model, detector, responder: Responder, catalog: SchemaCatalog, question: str = ""
) -> LinkingSession:
    """Resolve fires interactively: confirm implicated tables, else force the correct one."""
    run = LinkRun(model, detector, catalog, "human", question=question)
    drive_with_responder(run, responder)
    return run.table_session


def link_tables_then_columns(
    table_model,
    column_factory: ColumnStageFactory,
    table_detector,
    column_detector,
    catalog: SchemaCatalog,
    policy: str,
    *,
    responder: Responder | None = None,
    surrogate: SurrogateFilter | None = None,
    question: str = "",
) -> JointOutcome:
    """Table linking first, then column linking per predicted table.

    The joint run abstains as soon as either stage abstains; the column stage
    never starts when the table stage abstained.
    """
    run = LinkRun(
        table_model,
        table_detector,
        catalog,
        policy,
        column_factory=column_factory,
        column_detector=column_detector,
        surrogate=surrogate,
        question=question,
        link_columns=True,
    )
    drive_with_responder(run, responder)
    return run.outcome()
