"""Evaluation metrics: exact set match, detection coverage, abstention rates."""

from __future__ import annotations

from typing import Iterable, Sequence


def set_metrics(gt: Iterable[str], predicted: Iterable[str]) -> tuple[float, float, float]:
    """(exact match, precision, recall) of a predicted name set against ground truth.

    An empty prediction scores zero on all three (ground truth is non-empty by
    precondition).
    """
    gt_set = frozenset(gt)
    pred_set = frozenset(predicted)
    if not gt_set:
        raise ValueError("ground-truth set must be non-empty")
    em = 1.0 if gt_set == pred_set else 0.0
    hits = len(gt_set & pred_set)
    precision = hits / len(pred_set) if pred_set else 0.0
    recall = hits / len(gt_set)
    return em, precision, recall


def coverage_ear(
    predicted_flags: Sequence[int], true_flags: Sequence[int]
) -> tuple[float | None, float]:
    """Detection coverage and extra-abstention rate over per-token flags.

    Coverage is the fraction of true branching tokens that were flagged; it is
    None (undefined) when there are no true branches. EAR is the fraction of
    all tokens wrongly flagged.
    """
    if len(predicted_flags) != len(true_flags):
        raise ValueError("flag vectors must have equal length")
    n = len(true_flags)
    if n == 0:
        raise ValueError("empty flag vectors")
    true_pos = sum(1 for p, t in zip(predicted_flags, true_flags) if p == 1 and t == 1)
    branches = sum(1 for t in true_flags if t == 1)
    false_pos = sum(1 for p, t in zip(predicted_flags, true_flags) if p == 1 and t == 0)
    coverage = true_pos / branches if branches else None
    return coverage, false_pos / n


def tar_far(
    abstained: Sequence[int], would_be_correct: Sequence[int]
) -> tuple[float, float]:
    """True/false abstention rates over instances.

    TAR counts abstentions where the unabstained run would have been wrong,
    FAR abstentions where it would have been right; both are fractions of all
    instances, so TAR + FAR equals the abstention rate exactly.
    """
    if len(abstained) != len(would_be_correct):
        raise ValueError("flag vectors must have equal length")
    n = len(abstained)
    if n == 0:
        raise ValueError("empty flag vectors")
    tar = sum(1 for a, c in zip(abstained, would_be_correct) if a == 1 and c == 0) / n
    far = sum(1 for a, c in zip(abstained, would_be_correct) if a == 1 and c == 1) / n
    return tar, far
