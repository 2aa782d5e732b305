"""Generation traces and the branching-point training corpus.

A trace records one schema-linking generation token by token: the ground-truth
token sequence, the model's raw emission at each position under a corrected
prefix, the per-layer hidden state consumed when emitting each token, and a
0/1 label marking the positions where the emission deviated from ground truth
(the branching points). Traces are built by teacher-forcing replay: whenever
the model emits a wrong token, the correct one is substituted into the context
and generation resumes, so later positions are always judged against a correct
prefix.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

TRACE_FIELDS = ("id", "question", "gt_tables", "gt_tokens", "gen_tokens", "labels", "hidden")


class TraceFormatError(ValueError):
    """A trace record is malformed; carries the offending record id and field."""

    def __init__(self, record_id: str, fieldname: str, message: str) -> None:
        super().__init__(f"record {record_id!r}, field {fieldname!r}: {message}")
        self.record_id = record_id
        self.field = fieldname


class ReplayBudgetError(RuntimeError):
    """Teacher-forcing replay exceeded its step budget; carries the partial trace."""

    def __init__(self, message: str, partial: "GenerationTrace") -> None:
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class StepOutput:
    """One generation step: the emitted token and the hidden states that produced it."""

    token: int
    hidden: np.ndarray  # [n_layers, dim], the state consumed when emitting the token
    top_prob: float = 1.0


class SteppableModel(Protocol):
    """Anything that can emit the next token for an arbitrary forced prefix."""

    def step(self, prefix: Sequence[int]) -> StepOutput: ...


@dataclass
class GenerationTrace:
    """A single generation: tokens, per-token per-layer hidden states, branch labels."""

    id: str
    question: str
    gt_tables: frozenset[str]
    gt_tokens: list[int]
    gen_tokens: list[int]
    labels: list[int]
    hidden: np.ndarray  # float32 [m, n_layers, dim]

    def __post_init__(self) -> None:
        m = len(self.gen_tokens)
        if len(self.labels) != m:
            raise TraceFormatError(self.id, "labels", f"length {len(self.labels)} != token count {m}")
        if any(v not in (0, 1) for v in self.labels):
            raise TraceFormatError(self.id, "labels", "labels must be 0 or 1")
        hidden = np.asarray(self.hidden, dtype=np.float32)
        if hidden.ndim != 3:
            raise TraceFormatError(self.id, "hidden", f"expected 3 dimensions, got {hidden.ndim}")
        if hidden.shape[0] != m:
            raise TraceFormatError(self.id, "hidden", f"first dimension {hidden.shape[0]} != token count {m}")
        self.hidden = hidden
        self.gt_tables = frozenset(self.gt_tables)

    @property
    def n_layers(self) -> int:
        return int(self.hidden.shape[1])

    @property
    def dim(self) -> int:
        return int(self.hidden.shape[2])

    @property
    def branch_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.labels) if s == 1]


def find_branching_points(
    model: SteppableModel,
    gt_tokens: Sequence[int],
    *,
    trace_id: str = "",
    question: str = "",
    gt_tables: Iterable[str] = (),
    max_rounds: int | None = None,
) -> tuple[list[int], GenerationTrace]:
    """Replay a generation under teacher forcing and label its branching points.

    At each position the model emits a token from the corrected prefix; a
    mismatch against the ground-truth token marks a branching point, after
    which the correct token is forced into the context. Replay ends when the
    ground truth (including its trailing eos) is exhausted. ``max_rounds``
    bounds the number of model steps (default ``2 * len(gt_tokens)``) and
    guards models that would never converge; exceeding it raises
    :class:`ReplayBudgetError` carrying the partial trace.
    """
    gt = list(gt_tokens)
    if not gt:
        raise ValueError("gt_tokens must be non-empty")
    if max_rounds is None:
        max_rounds = 2 * len(gt)

    prefix: list[int] = []
    branches: list[int] = []
    gen: list[int] = []
    labels: list[int] = []
    states: list[np.ndarray] = []
    steps = 0
    for i, gt_tok in enumerate(gt):
        steps += 1
        if steps > max_rounds:
            partial = GenerationTrace(
                trace_id, question, frozenset(gt_tables), gt, gen, labels,
                np.stack(states) if states else np.zeros((0, 1, 1), dtype=np.float32),
            )
            raise ReplayBudgetError(
                f"replay exceeded max_rounds={max_rounds} after {i} positions", partial
            )
        out = model.step(prefix)
        gen.append(int(out.token))
        states.append(np.asarray(out.hidden, dtype=np.float32))
        if int(out.token) == gt_tok:
            labels.append(0)
        else:
            labels.append(1)
            branches.append(i)
        prefix.append(gt_tok)  # forcing: the correct token enters the context

    trace = GenerationTrace(
        trace_id, question, frozenset(gt_tables), gt, gen, labels, np.stack(states)
    )
    return branches, trace


@dataclass
class BranchDataset:
    """Per-layer (hidden vector, label) pairs pooled over traces.

    Layer ``j`` holds the pair ``(hidden[i, j], labels[i])`` for every token
    ``i`` of every contributing trace, so all layers share the same pair count
    and label vector.
    """

    hidden: np.ndarray  # float32 [pairs, n_layers, dim]
    labels: np.ndarray  # int8 [pairs]

    def __post_init__(self) -> None:
        self.hidden = np.asarray(self.hidden, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.hidden.ndim != 3:
            raise ValueError(f"hidden must be [pairs, layers, dim], got {self.hidden.shape}")
        if self.labels.shape != (self.hidden.shape[0],):
            raise ValueError("labels length must match pair count")
        if not set(np.unique(self.labels)).issubset({0, 1}):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return int(self.hidden.shape[0])

    @property
    def n_layers(self) -> int:
        return int(self.hidden.shape[1])

    @property
    def dim(self) -> int:
        return int(self.hidden.shape[2])

    def layer_pairs(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """The (vectors, labels) pair list for one layer."""
        return self.hidden[:, layer, :], self.labels


def build_branch_dataset(traces: Sequence[GenerationTrace]) -> BranchDataset:
    """Pool per-token pairs from traces into one per-layer dataset.

    All traces must agree on layer count and hidden dimension. A single-class
    result is allowed but flagged with a warning: it cannot train a classifier.
    """
    if not traces:
        raise ValueError("no traces given")
    n, d = traces[0].n_layers, traces[0].dim
    for t in traces:
        if t.n_layers != n or t.dim != d:
            raise TraceFormatError(
                t.id, "hidden",
                f"layer/dim mismatch: expected [{n}, {d}], got [{t.n_layers}, {t.dim}]",
            )
    hidden = np.concatenate([t.hidden for t in traces], axis=0)
    labels = np.concatenate([np.asarray(t.labels, dtype=np.int8) for t in traces])
    if len(np.unique(labels)) < 2:
        warnings.warn(
            "branch dataset contains a single class; unusable for classifier training",
            stacklevel=2,
        )
    return BranchDataset(hidden, labels)


def split_dataset(
    dataset: BranchDataset, calib_fraction: float, seed: int
) -> tuple[BranchDataset, BranchDataset]:
    """Label-stratified split into (train, calibration) parts.

    The split is disjoint, exhaustive, and deterministic per seed: within each
    class the indices are shuffled by a seeded generator and
    ``round(calib_fraction * class_count)`` of them go to calibration.
    """
    if not 0.0 < calib_fraction < 1.0:
        raise ValueError(f"calib_fraction must be in (0, 1), got {calib_fraction}")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    calib_idx: list[np.ndarray] = []
    train_idx: list[np.ndarray] = []
    for cls in (0, 1):
        members = np.flatnonzero(dataset.labels == cls)
        if members.size == 0:
            continue
        perm = rng.permutation(members)
        n_cal = int(round(calib_fraction * members.size))
        calib_idx.append(perm[:n_cal])
        train_idx.append(perm[n_cal:])
    calib = np.sort(np.concatenate(calib_idx)) if calib_idx else np.empty(0, dtype=int)
    train = np.sort(np.concatenate(train_idx)) if train_idx else np.empty(0, dtype=int)
    return (
        BranchDataset(dataset.hidden[train], dataset.labels[train]),
        BranchDataset(dataset.hidden[calib], dataset.labels[calib]),
    )


def save_split_dataset(
    train: BranchDataset,
    calibration: BranchDataset,
    path: str | Path,
    *,
    calib_fraction: float,
    split_seed: int,
) -> None:
    """Persist a train/calibration split as one npz archive."""
    np.savez_compressed(
        path,
        hidden_train=train.hidden,
        labels_train=train.labels,
        hidden_calib=calibration.hidden,
        labels_calib=calibration.labels,
        calib_fraction=np.float64(calib_fraction),
        split_seed=np.int64(split_seed),
    )


def load_split_dataset(path: str | Path) -> tuple[BranchDataset, BranchDataset, dict]:
    with np.load(path) as data:
        train = BranchDataset(data["hidden_train"], data["labels_train"])
        calib = BranchDataset(data["hidden_calib"], data["labels_calib"])
        meta = {
            "calib_fraction": float(data["calib_fraction"]),
            "split_seed": int(data["split_seed"]),
        }
    return train, calib, meta


# -- trace file format ---------------------------------------------------------
#
# Line-delimited UTF-8 JSON, one generation per line, fields exactly:
#   id, question, gt_tables, gt_tokens, gen_tokens, labels, hidden
# hidden is [m][n_layers][dim] of numbers; values are float32 and survive the
# round trip bit-exactly (float32 -> float64 repr -> float32).


def write_traces(traces: Sequence[GenerationTrace], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in traces:
            record = {
                "id": t.id,
                "question": t.question,
                "gt_tables": sorted(t.gt_tables),
                "gt_tokens": list(t.gt_tokens),
                "gen_tokens": list(t.gen_tokens),
                "labels": list(t.labels),
                "hidden": [[[float(x) for x in layer] for layer in tok] for tok in t.hidden],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def _require(record: dict, record_id: str, fieldname: str):
    if fieldname not in record:
        raise TraceFormatError(record_id, fieldname, "missing")
    return record[fieldname]


def read_traces(path: str | Path) -> list[GenerationTrace]:
    """Read a trace file, validating every record; an empty file yields []."""
    traces: list[GenerationTrace] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {line_no}", "record", f"invalid JSON: {exc}") from exc
            record_id = str(record.get("id", f"line {line_no}"))
            for fieldname in TRACE_FIELDS:
                _require(record, record_id, fieldname)
            gt_tokens = record["gt_tokens"]
            gen_tokens = record["gen_tokens"]
            labels = record["labels"]
            hidden = record["hidden"]
            for fieldname, value in (("gt_tokens", gt_tokens), ("gen_tokens", gen_tokens), ("labels", labels)):
                if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
                    raise TraceFormatError(record_id, fieldname, "must be an array of integers")
            if len(labels) != len(gen_tokens):
                raise TraceFormatError(
                    record_id, "labels",
                    f"length {len(labels)} != gen_tokens length {len(gen_tokens)}",
                )
            m = len(gen_tokens)
            if not isinstance(hidden, list) or len(hidden) != m:
                raise TraceFormatError(record_id, "hidden", f"outer length must be {m}")
            try:
                arr = np.asarray(hidden, dtype=np.float64)
            except ValueError as exc:
                raise TraceFormatError(record_id, "hidden", f"ragged shape: {exc}") from exc
            if m > 0 and arr.ndim != 3:
                raise TraceFormatError(record_id, "hidden", f"expected [m][layers][dim], got shape {arr.shape}")
            if m == 0:
                arr = arr.reshape(0, 1, 1)
            try:
                traces.append(
                    GenerationTrace(
                        record_id,
                        str(record["question"]),
                        frozenset(record["gt_tables"]),
                        list(gt_tokens),
                        list(gen_tokens),
                        list(labels),
                        arr.astype(np.float32),
                    )
                )
            except TraceFormatError:
                raise
    return traces
