import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkguard.probes import (
    LayerClassifier,
    LayerSelection,
    TrainConfig,
    _sample_weights,
    auc,
    loss_and_grads,
    predict_probs,
    predict_score,
    select_top_k_layers,
    train_layer_classifier,
)
from linkguard.traces import BranchDataset


def toy_separable(n=200, d=2, seed=0):
    rng = np.random.default_rng(seed)
    half = n // 2
    pos = rng.standard_normal((half, d)) * 0.3 + 1.0
    neg = rng.standard_normal((half, d)) * 0.3 - 1.0
    x = np.vstack([pos, neg])
    y = np.array([1] * half + [0] * half)
    return x, y


# -- training ----------------------------------------------------------------------


def test_separable_toy_accuracy():
    x, y = toy_separable()
    clf = train_layer_classifier(x, y, TrainConfig(hidden_width=8, epochs=200, seed=1))
    preds = predict_probs(clf, x).argmax(axis=1)
    assert (preds == y).mean() >= 0.95


def test_single_class_rejected():
    x = np.zeros((10, 2))
    y = np.zeros(10, dtype=int)
    with pytest.raises(ValueError, match="both classes"):
        train_layer_classifier(x, y)


def test_training_deterministic_bitwise():
    x, y = toy_separable(seed=5)
    a = train_layer_classifier(x, y, TrainConfig(epochs=40, seed=3))
    b = train_layer_classifier(x, y, TrainConfig(epochs=40, seed=3))
    assert a.w1.tobytes() == b.w1.tobytes()
    assert a.b1.tobytes() == b.b1.tobytes()
    assert a.w2.tobytes() == b.w2.tobytes()
    assert a.b2.tobytes() == b.b2.tobytes()


def test_identical_inputs_plateau_at_prior_entropy():
    # balanced mixed labels on one repeated input: the best possible loss is
    # the entropy of the class prior, here ln 2
    x = np.ones((40, 3))
    y = np.array([0, 1] * 20)
    clf = train_layer_classifier(x, y, TrainConfig(hidden_width=8, epochs=400, seed=0))
    prior_entropy = math.log(2.0)
    assert clf.final_loss == pytest.approx(prior_entropy, rel=0.05)


def test_loss_curve_recorded():
    x, y = toy_separable()
    clf = train_layer_classifier(x, y, TrainConfig(epochs=25, seed=0))
    assert len(clf.loss_curve) == 25
    assert clf.loss_curve[-1] < clf.loss_curve[0]


# -- gradients ----------------------------------------------------------------------


def test_gradients_match_central_differences():
    rng = np.random.default_rng(42)
    failures = 0
    for trial in range(100):
        d, h, n = 3, 4, 6
        x = rng.standard_normal((n, d))
        y = rng.integers(0, 2, size=n)
        if len(np.unique(y)) < 2:
            y[0], y[1] = 0, 1
        weights = _sample_weights(y, "balanced")
        params = {
            "w1": rng.standard_normal((d, h)),
            "b1": rng.standard_normal(h),
            "w2": rng.standard_normal((h, 2)),
            "b2": rng.standard_normal(2),
        }
        _, grads = loss_and_grads(params["w1"], params["b1"], params["w2"], params["b2"], x, y, weights)
        eps = 1e-6
        max_rel = 0.0
        for key in params:
            flat = params[key].reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                up, _ = loss_and_grads(params["w1"], params["b1"], params["w2"], params["b2"], x, y, weights)
                flat[idx] = orig - eps
                down, _ = loss_and_grads(params["w1"], params["b1"], params["w2"], params["b2"], x, y, weights)
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                analytic = grads[key].reshape(-1)[idx]
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
                max_rel = max(max_rel, rel)
        if max_rel >= 1e-4:
            failures += 1
    assert failures == 0


# -- prediction ----------------------------------------------------------------------


def test_predict_score_sums_to_one():
    x, y = toy_separable()
    clf = train_layer_classifier(x, y, TrainConfig(epochs=30, seed=0))
    p1, p0 = predict_score(clf, x[0])
    assert abs(p0 + p1 - 1.0) <= 1e-9


def test_zero_weights_give_uniform():
    clf = LayerClassifier(0, np.zeros((3, 4)), np.zeros(4), np.zeros((4, 2)), np.zeros(2))
    assert predict_score(clf, np.ones(3)) == (0.5, 0.5)


def test_prediction_deterministic():
    x, y = toy_separable()
    clf = train_layer_classifier(x, y, TrainConfig(epochs=30, seed=0))
    assert predict_score(clf, x[3]) == predict_score(clf, x[3])


def test_dim_mismatch_rejected():
    clf = LayerClassifier(0, np.zeros((3, 4)), np.zeros(4), np.zeros((4, 2)), np.zeros(2))
    with pytest.raises(ValueError, match="dim"):
        predict_score(clf, np.ones(5))


# -- auc ------------------------------------------------------------------------------


def test_auc_perfect_separation():
    assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0


def test_auc_tie_counts_half():
    assert auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_inverted():
    assert auc([0.2, 0.8], [1, 0]) == 0.0


def test_auc_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        auc([0.5, 0.6], [1, 1])


def brute_force_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


@settings(max_examples=80, deadline=None)
@given(
    data=st.lists(
        st.tuples(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), st.integers(0, 1)),
        min_size=2,
        max_size=20,
    )
)
def test_auc_matches_pair_counting(data):
    scores = [s for s, _ in data]
    labels = [l for _, l in data]
    if len(set(labels)) < 2:
        labels[0] = 1 - labels[1] if len(labels) > 1 else 0
        if len(set(labels)) < 2:
            return
    assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


# -- layer selection -----------------------------------------------------------------


def make_selection_dataset(layer_aucs, n=400, seed=0):
    """A dataset + trained classifiers whose calibration AUC ranking follows layer_aucs."""
    rng = np.random.default_rng(seed)
    n_layers = len(layer_aucs)
    labels = (rng.random(n) < 0.4).astype(np.int8)
    hidden = rng.standard_normal((n, n_layers, 4)).astype(np.float32)
    for j, strength in enumerate(layer_aucs):
        hidden[:, j, 0] += labels * strength  # separation along one coordinate
    ds = BranchDataset(hidden, labels)
    classifiers = []
    for j in range(n_layers):
        vectors, y = ds.layer_pairs(j)
        classifiers.append(
            train_layer_classifier(vectors, y, TrainConfig(hidden_width=8, epochs=150, seed=j), j)
        )
    return classifiers, ds


def test_select_top_k_orders_by_auc():
    classifiers, ds = make_selection_dataset([0.5, 4.0, 2.0])
    selection = select_top_k_layers(classifiers, ds, k=2)
    assert selection.layers == [1, 2]
    assert selection.k == 2


def test_select_all_layers_sorted():
    classifiers, ds = make_selection_dataset([0.5, 4.0, 2.0])
    selection = select_top_k_layers(classifiers, ds, k=3)
    aucs = [a for _, a in selection.ranked]
    assert aucs == sorted(aucs, reverse=True)


def test_select_k_out_of_range():
    classifiers, ds = make_selection_dataset([1.0, 2.0])
    with pytest.raises(ValueError):
        select_top_k_layers(classifiers, ds, k=3)
    with pytest.raises(ValueError):
        select_top_k_layers(classifiers, ds, k=0)


def test_selection_tie_breaks_by_lower_index():
    ranked = ((2, 0.95), (0, 0.9), (4, 0.9), (1, 0.6), (3, 0.5))
    selection = LayerSelection(ranked, k=2)
    assert selection.layers == [2, 0]
    with pytest.raises(ValueError):
        LayerSelection(((4, 0.9), (0, 0.9)), k=1)  # tie must put lower index first


def test_selection_validates_auc_range():
    with pytest.raises(ValueError):
        LayerSelection(((0, 1.2),), k=1)
