"""Per-layer hidden-state classifiers scoring branching probability.

One two-layer perceptron per network layer maps that layer's hidden vector to
class probabilities over {non-branching, branching}. Training is full-batch
gradient descent on a class-weighted softmax cross entropy, done in float64
with a seeded initialization so the same seed reproduces the same weights
bit for bit. The analytic gradients are exposed for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .traces import BranchDataset


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 64
    epochs: int = 300
    learning_rate: float = 0.05
    class_weighting: str = "balanced"  # "balanced" (inverse frequency) or "none"
    seed: int = 0


@dataclass
class LayerClassifier:
    """A trained two-layer perceptron for one network layer.

    Inference is deterministic; probabilities are a softmax over two logits and
    sum to one.
    """

    layer_index: int
    w1: np.ndarray  # [dim, hidden_width]
    b1: np.ndarray  # [hidden_width]
    w2: np.ndarray  # [hidden_width, 2]
    b2: np.ndarray  # [2]
    epochs: int = 0
    loss_curve: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_width(self) -> int:
        return int(self.w1.shape[1])

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1] if self.loss_curve else float("nan")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward(w1, b1, w2, b2, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    logits = a1 @ w2 + b2
    return z1, a1, _softmax(logits)


def _sample_weights(labels: np.ndarray, class_weighting: str) -> np.ndarray:
    n = labels.shape[0]
    if class_weighting == "none":
        return np.ones(n)
    if class_weighting != "balanced":
        raise ValueError(f"unknown class weighting {class_weighting!r}")
    weights = np.empty(n)
    for cls in (0, 1):
        members = labels == cls
        count = members.sum()
        if count:
            weights[members] = n / (2.0 * count)
    return weights


def loss_and_grads(
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: np.ndarray,
    x: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted-mean cross entropy and its analytic gradients."""
    z1, a1, probs = _forward(w1, b1, w2, b2, x)
    n = x.shape[0]
    total_w = sample_weights.sum()
    p_true = probs[np.arange(n), labels]
    loss = float(np.sum(sample_weights * -np.log(np.maximum(p_true, 1e-300))) / total_w)

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= (sample_weights / total_w)[:, None]
    grads = {
        "w2": a1.T @ dlogits,
        "b2": dlogits.sum(axis=0),
    }
    da1 = dlogits @ w2.T
    dz1 = da1 * (z1 > 0)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def train_layer_classifier(
    vectors: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig = TrainConfig(),
    layer_index: int = 0,
) -> LayerClassifier:
    """Fit one layer's classifier by full-batch gradient descent.

    Requires both classes in the training pairs. Branching tokens are rare, so
    the default loss weights samples by inverse class frequency.
    """
    x = np.asarray(vectors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad training shapes: vectors {x.shape}, labels {y.shape}")
    classes = np.unique(y)
    if not np.array_equal(classes, np.array([0, 1])):
        raise ValueError(f"training data must contain both classes, found {classes.tolist()}")

    d = x.shape[1]
    h = config.hidden_width
    rng = np.random.default_rng(config.seed)
    w1 = rng.standard_normal((d, h)) * np.sqrt(2.0 / d)
    b1 = np.zeros(h)
    w2 = rng.standard_normal((h, 2)) * np.sqrt(2.0 / h)
    b2 = np.zeros(2)
    weights = _sample_weights(y, config.class_weighting)

    curve: list[float] = []
    lr = config.learning_rate
    for _ in range(config.epochs):
        loss, grads = loss_and_grads(w1, b1, w2, b2, x, y, weights)
        curve.append(loss)
        w1 -= lr * grads["w1"]
        b1 -= lr * grads["b1"]
        w2 -= lr * grads["w2"]
        b2 -= lr * grads["b2"]

    return LayerClassifier(layer_index, w1, b1, w2, b2, config.epochs, curve)


def predict_probs(clf: LayerClassifier, vectors: np.ndarray) -> np.ndarray:
    """Class probabilities [batch, 2] (columns: non-branching, branching)."""
    x = np.asarray(vectors, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != clf.dim:
        raise ValueError(f"input dim {x.shape[1]} != classifier dim {clf.dim}")
    _, _, probs = _forward(clf.w1, clf.b1, clf.w2, clf.b2, x)
    return probs[0] if single else probs


def predict_score(clf: LayerClassifier, hidden: np.ndarray) -> tuple[float, float]:
    """(p_branching, p_non_branching) for one hidden vector."""
    probs = predict_probs(clf, hidden)
    return float(probs[1]), float(probs[0])


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-based AUC (Mann-Whitney); tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos == 0 or neg == 0:
        raise ValueError("auc requires both classes")
    ranks = rankdata(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


@dataclass(frozen=True)
class LayerSelection:
    """Layers ranked by calibration AUC, descending, ties broken by lower index."""

    ranked: tuple[tuple[int, float], ...]  # (layer_index, auc) sorted best-first
    k: int

    def __post_init__(self) -> None:
        indices = [i for i, _ in self.ranked]
        if len(set(indices)) != len(indices):
            raise ValueError("layer indices must be distinct")
        for _, a in self.ranked:
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"auc {a} outside [0, 1]")
        keys = [(-a, i) for i, a in self.ranked]
        if keys != sorted(keys):
            raise ValueError("ranking must be sorted by auc descending, ties by lower index")
        if not 1 <= self.k <= len(self.ranked):
            raise ValueError(f"k={self.k} out of range for {len(self.ranked)} layers")

    @property
    def layers(self) -> list[int]:
        """The chosen k layer indices, best first."""
        return [i for i, _ in self.ranked[: self.k]]

    @property
    def aucs(self) -> dict[int, float]:
        return {i: a for i, a in self.ranked}


def select_top_k_layers(
    classifiers: Sequence[LayerClassifier],
    calibration: BranchDataset,
    k: int,
) -> LayerSelection:
    """Rank layers by branching-score AUC on the calibration pairs and keep k."""
    n = len(classifiers)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} layers")
    scored: list[tuple[int, float]] = []
    for clf in classifiers:
        vectors, labels = calibration.layer_pairs(clf.layer_index)
        scores = predict_probs(clf, vectors)[:, 1]
        scored.append((clf.layer_index, auc(scores, labels)))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return LayerSelection(tuple(scored), k)
