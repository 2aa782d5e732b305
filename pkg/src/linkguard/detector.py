"""The per-token branching detector: selected layers, their calibrated sets, one decision."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregate import majority_vote, random_permutation_aggregate
from .conformal import ConformalCalibrator, prediction_set
from .probes import LayerClassifier, LayerSelection


@dataclass(frozen=True)
class DetectorDecision:
    fire: bool
    layer_sets: tuple[frozenset, ...]
    aggregate: frozenset


@dataclass
class BranchDetector:
    """Aggregates the selected layers' conformal sets into a per-token decision.

    ``classifiers`` and ``calibrators`` are keyed by layer index; only layers
    chosen by ``selection`` contribute. Permutation seeds derive from
    (base_seed, token position), so distinct tokens use independent, replayable
    permutations.
    """

    classifiers: dict[int, LayerClassifier]
    calibrators: dict[int, ConformalCalibrator]
    selection: LayerSelection
    base_seed: int = 0
    method: str = "permutation"  # or "vote" / "vote_half"
    theta: float = 0.5

    def __post_init__(self) -> None:
        if self.method not in ("permutation", "vote", "vote_half"):
            raise ValueError(f"unknown aggregation method {self.method!r}")
        for layer in self.selection.layers:
            if layer not in self.classifiers or layer not in self.calibrators:
                raise ValueError(f"selected layer {layer} has no trained classifier/calibrator")

    @property
    def alpha(self) -> float:
        first = self.selection.layers[0]
        return self.calibrators[first].alpha

    def layer_sets(self, hidden: np.ndarray) -> tuple[frozenset, ...]:
        """Per-selected-layer prediction sets for one token's hidden states [n, d]."""
        h = np.asarray(hidden)
        return tuple(
            prediction_set(self.calibrators[j], self.classifiers[j], h[j])
            for j in self.selection.layers
        )

    def aggregate(self, sets: Sequence[frozenset], token_index: int) -> frozenset:
        if self.method == "permutation":
            return random_permutation_aggregate(sets, (self.base_seed, token_index))
        if self.method == "vote_half":
            from .aggregate import vote_at_least_half

            return vote_at_least_half(sets)
        return majority_vote(sets, self.theta)

    def decide(
        self,
        step_index: int,
        prefix: Sequence[int],
        token: int,
        hidden: np.ndarray,
    ) -> DetectorDecision:
        sets = self.layer_sets(hidden)
        agg = self.aggregate(sets, step_index)
        return DetectorDecision(fire=1 in agg, layer_sets=sets, aggregate=agg)


@dataclass
class OracleDetector:
    """Fires exactly on true deviations; backed by a model that knows the plan."""

    model: "object"  # anything with branch_truth(prefix, token) -> bool

    def decide(
        self,
        step_index: int,
        prefix: Sequence[int],
        token: int,
        hidden: np.ndarray,
    ) -> DetectorDecision:
        fire = bool(self.model.branch_truth(list(prefix), int(token)))
        chosen = frozenset({1}) if fire else frozenset({0})
        return DetectorDecision(fire=fire, layer_sets=(chosen,), aggregate=chosen)


@dataclass
class NeverFireDetector:
    """Detection disabled; used for would-be-correct replays."""

    def decide(self, step_index, prefix, token, hidden) -> DetectorDecision:
        empty = frozenset({0})
        return DetectorDecision(fire=False, layer_sets=(empty,), aggregate=empty)
