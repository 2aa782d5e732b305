"""Split conformal calibration and prediction sets over the binary branch labels.

The nonconformity score of a calibration pair is one minus the classifier's
probability of the true class. The exchangeable calibrator thresholds at the
ceil((N+1)(1-alpha))-th smallest calibration score (infinity when that index
exceeds N), and a test label enters the prediction set when its predicted
probability is at least one minus the threshold. Under exchangeability the
true label lands in the set with probability at least 1-alpha.

The weighted variant drops exchangeability: the threshold for a test vector is
computed from its K nearest calibration vectors, kernel-weighted by squared
distance, with the weight mass normalized against one extra unit so the rule
stays conservative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .probes import LayerClassifier, predict_probs

LABELS = (0, 1)
PredictionSet = frozenset


def nonconformity_scores(clf: LayerClassifier, vectors: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """1 - p(true class) for each calibration pair."""
    probs = predict_probs(clf, np.asarray(vectors))
    y = np.asarray(labels, dtype=np.int64)
    return 1.0 - probs[np.arange(len(y)), y]


@dataclass
class ConformalCalibrator:
    """Calibration scores plus the threshold machinery for one layer classifier.

    mode "exchangeable" carries the precomputed threshold ``epsilon``; mode
    "weighted" carries the calibration vectors, neighbor count and kernel
    width, and computes a per-test-point threshold.
    """

    mode: str  # "exchangeable" | "weighted"
    alpha: float
    scores: np.ndarray  # float64 [N], nonconformity of calibration pairs
    epsilon: float = float("inf")
    vectors: np.ndarray | None = None  # float32 [N, dim], weighted mode only
    n_neighbors: int = 0
    tau: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("exchangeable", "weighted"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.size == 0:
            raise ValueError("calibration scores are empty")
        if np.any((self.scores < 0) | (self.scores > 1)):
            raise ValueError("nonconformity scores must lie in [0, 1]")


def quantile_threshold(scores: np.ndarray, alpha: float) -> float:
    """ceil((N+1)(1-alpha))-th smallest score, or +inf when the index exceeds N."""
    ordered = np.sort(np.asarray(scores, dtype=np.float64))
    n = ordered.size
    index = int(np.ceil((n + 1) * (1.0 - alpha)))
    if index > n:
        return float("inf")
    return float(ordered[index - 1])


def calibrate_exchangeable(
    clf: LayerClassifier,
    vectors: np.ndarray,
    labels: np.ndarray,
    alpha: float,
) -> ConformalCalibrator:
    if len(np.asarray(labels)) == 0:
        raise ValueError("calibration set is empty")
    scores = nonconformity_scores(clf, vectors, labels)
    return ConformalCalibrator(
        mode="exchangeable",
        alpha=alpha,
        scores=scores,
        epsilon=quantile_threshold(scores, alpha),
    )


def predict_set_exchangeable(
    calibrator: ConformalCalibrator, clf: LayerClassifier, hidden: np.ndarray
) -> frozenset:
    """{y : p(y | hidden) >= 1 - epsilon}."""
    probs = predict_probs(clf, hidden)
    cut = 1.0 - calibrator.epsilon
    return frozenset(y for y in LABELS if probs[y] >= cut)


def sets_exchangeable_batch(
    calibrator: ConformalCalibrator, clf: LayerClassifier, vectors: np.ndarray
) -> np.ndarray:
    """Boolean membership matrix [batch, 2] for a batch of hidden vectors."""
    probs = predict_probs(clf, np.asarray(vectors))
    return probs >= (1.0 - calibrator.epsilon)


def pi_value(calibration_scores: Sequence[float], r_test: float) -> float:
    """Rank-based p-value of a test nonconformity against the calibration scores.

    A label is admitted to the prediction set when its value exceeds alpha;
    on the same scores this admits exactly the labels the quantile rule admits.
    """
    scores = np.asarray(calibration_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("calibration scores are empty")
    return float((np.count_nonzero(scores >= r_test) + 1) / (scores.size + 1))


def predict_set_by_pi(
    calibrator: ConformalCalibrator, clf: LayerClassifier, hidden: np.ndarray
) -> frozenset:
    """Prediction set via the pi-value rule; agrees with the quantile rule."""
    probs = predict_probs(clf, hidden)
    members = []
    for y in LABELS:
        if pi_value(calibrator.scores, 1.0 - probs[y]) > calibrator.alpha:
            members.append(y)
    return frozenset(members)


# -- weighted (non-exchangeable) variant --------------------------------------


def default_tau(vectors: np.ndarray, max_points: int = 256) -> float:
    """Median pairwise squared distance over an evenly-spaced calibration subsample."""
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if n > max_points:
        idx = np.linspace(0, n - 1, max_points).astype(int)
        x = x[idx]
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    upper = d2[np.triu_indices(x.shape[0], k=1)]
    med = float(np.median(np.maximum(upper, 0.0))) if upper.size else 1.0
    return med if med > 0 else 1.0


def calibrate_weighted(
    clf: LayerClassifier,
    vectors: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    n_neighbors: int | None = None,
    tau: float | None = None,
) -> ConformalCalibrator:
    x = np.asarray(vectors, dtype=np.float32)
    if x.shape[0] == 0:
        raise ValueError("calibration set is empty")
    scores = nonconformity_scores(clf, x, labels)
    if n_neighbors is None:
        n_neighbors = min(200, x.shape[0])
    if n_neighbors > x.shape[0]:
        raise ValueError(f"n_neighbors={n_neighbors} exceeds calibration size {x.shape[0]}")
    if tau is None:
        tau = default_tau(x)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return ConformalCalibrator(
        mode="weighted",
        alpha=alpha,
        scores=scores,
        vectors=x,
        n_neighbors=int(n_neighbors),
        tau=float(tau),
    )


def threshold_from_weighted_scores(
    normalized_weights: np.ndarray, sigma: np.ndarray, alpha: float
) -> float:
    """Smallest score whose cumulative normalized weight reaches 1-alpha, else +inf.

    The cumulative mass at a score value counts every pair with a score less
    than or equal to it (closed form, so the threshold is attained at ties).
    """
    w = np.asarray(normalized_weights, dtype=np.float64)
    s = np.asarray(sigma, dtype=np.float64)
    order = np.argsort(s, kind="stable")
    csum = np.cumsum(w[order])
    sorted_s = s[order]
    target = 1.0 - alpha
    for value in np.unique(sorted_s):
        mass = csum[np.searchsorted(sorted_s, value, side="right") - 1]
        if mass >= target - 1e-12:
            return float(value)
    return float("inf")


def weighted_threshold(calibrator: ConformalCalibrator, hidden: np.ndarray) -> float:
    """Distance-weighted score threshold for one test vector.

    Takes the K nearest calibration vectors by squared Euclidean distance,
    weights them with a Gaussian kernel of width tau, normalizes against one
    extra unit of mass, and scans for the smallest neighbor score whose
    cumulative weight reaches 1-alpha.
    """
    if calibrator.mode != "weighted":
        raise ValueError("calibrator is not in weighted mode")
    x = np.asarray(calibrator.vectors, dtype=np.float64)
    h = np.asarray(hidden, dtype=np.float64).reshape(-1)
    if h.shape[0] != x.shape[1]:
        raise ValueError(f"input dim {h.shape[0]} != calibration dim {x.shape[1]}")
    d2 = np.sum((x - h) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")[: calibrator.n_neighbors]
    w = np.exp(-d2[order] / calibrator.tau)
    w_hat = w / (1.0 + w.sum())
    return threshold_from_weighted_scores(w_hat, calibrator.scores[order], calibrator.alpha)


def predict_set_weighted(
    calibrator: ConformalCalibrator, clf: LayerClassifier, hidden: np.ndarray
) -> frozenset:
    """{y : p(y | hidden) >= 1 - weighted threshold at hidden}."""
    eps = weighted_threshold(calibrator, hidden)
    probs = predict_probs(clf, hidden)
    cut = 1.0 - eps
    return frozenset(y for y in LABELS if probs[y] >= cut)


def prediction_set(
    calibrator: ConformalCalibrator, clf: LayerClassifier, hidden: np.ndarray
) -> frozenset:
    """Dispatch on calibrator mode."""
    if calibrator.mode == "exchangeable":
        return predict_set_exchangeable(calibrator, clf, hidden)
    return predict_set_weighted(calibrator, clf, hidden)
