"""Aggregating per-layer prediction sets into a single branching decision.

Two rules over k binary-label prediction sets:

* threshold vote: a label survives when it appears in strictly more than a
  theta fraction of the sets. Whatever the dependence between the sets, the
  true label survives with probability at least 1 - alpha/(1-theta), and the
  vote's size is bounded by sum(|C_i|) / (k * theta).
* random permutation: shuffle the sets, and at every prefix length i keep the
  labels appearing in at least i/2 of the first i sets; the output is the
  intersection over all prefixes. This carries the theta=1/2 guarantee
  (miss probability at most 2*alpha) while never producing a larger set than
  the final at-least-half prefix, so spurious branch flags can only go down.

A token is declared branching exactly when label 1 survives the permutation
aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

LABELS = (0, 1)


def _counts(sets: Sequence[frozenset]) -> dict[int, int]:
    return {c: sum(1 for s in sets if c in s) for c in LABELS}


def majority_vote(sets: Sequence[frozenset], theta: float) -> frozenset:
    """Labels appearing in strictly more than a theta fraction of the sets."""
    if not sets:
        raise ValueError("no prediction sets to aggregate")
    if not 0.0 <= theta < 1.0:
        raise ValueError(f"theta must be in [0, 1), got {theta}")
    k = len(sets)
    counts = _counts(sets)
    return frozenset(c for c in LABELS if counts[c] / k > theta)


def vote_at_least_half(sets: Sequence[frozenset]) -> frozenset:
    """Labels appearing in at least half of the sets (the final prefix rule)."""
    if not sets:
        raise ValueError("no prediction sets to aggregate")
    k = len(sets)
    counts = _counts(sets)
    return frozenset(c for c in LABELS if counts[c] >= k / 2.0)


def vote_size_bound(sets: Sequence[frozenset], theta: float) -> int:
    """Worst-case vote size floor(sum |C_i| / (k * theta)); checked against the vote."""
    if theta <= 0.0:
        raise ValueError("theta must be positive for the size bound")
    k = len(sets)
    total = sum(len(s) for s in sets)
    bound = int(np.floor(total / (k * theta)))
    vote = majority_vote(sets, theta)
    if len(vote) > bound:  # cannot happen; guards the implementation itself
        raise AssertionError(f"vote size {len(vote)} exceeds bound {bound}")
    return bound


def random_permutation_aggregate(
    sets: Sequence[frozenset], seed: int | Sequence[int]
) -> frozenset:
    """Intersection over all prefixes of the at-least-half rule, in seeded order."""
    if not sets:
        raise ValueError("no prediction sets to aggregate")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(sets))
    result = frozenset(LABELS)
    count = {0: 0, 1: 0}
    for i, idx in enumerate(perm, start=1):
        chosen = sets[idx]
        for c in LABELS:
            if c in chosen:
                count[c] += 1
        prefix_set = frozenset(c for c in LABELS if count[c] >= i / 2.0)
        result &= prefix_set
        if not result:
            break
    return result


def decide_branching(sets: Sequence[frozenset], seed: int | Sequence[int]) -> bool:
    """True exactly when label 1 survives the permutation aggregate."""
    return 1 in random_permutation_aggregate(sets, seed)


@dataclass(frozen=True)
class AggregationResult:
    """Both aggregates for one token, with the permutation that produced them."""

    sets: tuple[frozenset, ...]
    theta: float
    seed: tuple[int, ...]
    permutation: tuple[int, ...]
    rng_name: str
    c_theta: frozenset
    c_pi: frozenset
    is_branching: bool


def aggregate_details(
    sets: Sequence[frozenset], seed: int | Sequence[int], theta: float = 0.5
) -> AggregationResult:
    """Run both rules and record the permutation; checks subset dominance."""
    seed_tuple = (seed,) if isinstance(seed, int) else tuple(seed)
    rng = np.random.default_rng(seed)
    permutation = tuple(int(i) for i in rng.permutation(len(sets)))
    c_theta = majority_vote(sets, theta)
    c_pi = random_permutation_aggregate(sets, seed)
    if not c_pi <= vote_at_least_half(sets):
        raise AssertionError("permutation aggregate escaped the at-least-half vote")
    return AggregationResult(
        sets=tuple(frozenset(s) for s in sets),
        theta=theta,
        seed=seed_tuple,
        permutation=permutation,
        rng_name="pcg64",
        c_theta=c_theta,
        c_pi=c_pi,
        is_branching=1 in c_pi,
    )
